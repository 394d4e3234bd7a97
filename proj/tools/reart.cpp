// reart command-line interface.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "reart/cloud.hpp"
#include "reart/error.hpp"
#include "reart/fitting.hpp"
#include "reart/metrics.hpp"
#include "reart/model.hpp"
#include "reart/parallel.hpp"
#include "reart/serve.hpp"
#include "reart/synth.hpp"

namespace {

using namespace reart;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<int> parse_candidates(const std::string& text, int frames) {
  std::vector<int> out;
  if (text == "all") {
    for (int t = 0; t < frames; ++t) out.push_back(t);
    return out;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      throw UsageError("invalid --canonical value '" + text + "'");
    }
    if (used != item.size()) throw UsageError("invalid --canonical value '" + text + "'");
    if (v < 0 || v >= frames) throw UsageError("--canonical frame " + item + " is out of range");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--canonical needs at least one frame");
  return out;
}

void apply_threads(int threads) {
  if (threads > 0) {
    set_thread_count(threads);
    return;
  }
  if (const char* env = std::getenv("REART_THREADS")) {
    try {
      set_thread_count(std::stoi(env));
    } catch (const std::exception&) {
      throw UsageError("REART_THREADS must be an integer");
    }
  }
}

std::vector<JointType> parse_joint_types(const std::string& text) {
  std::vector<JointType> out;
  if (text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(joint_type_from_string(item));
    } catch (const Error&) {
      throw UsageError("unknown joint type '" + item + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rearticulable models from point-cloud sequences"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: REART_THREADS or hardware count)");

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic articulated-object dataset");
  SynthSpec spec;
  std::string gen_out, topology = "chain", joint_types, motion = "monotone";
  gen->add_option("--parts", spec.n_parts, "Number of rigid parts (1-8)")->capture_default_str();
  gen->add_option("--frames", spec.frames, "Frames per sequence")->capture_default_str();
  gen->add_option("--points", spec.points, "Points per frame")->capture_default_str();
  gen->add_option("--seed", spec.seed, "Random seed")->capture_default_str();
  gen->add_option("--topology", topology, "chain | star | random")->capture_default_str();
  gen->add_option("--joints", joint_types, "Comma-separated joint types per non-root part (revolute,prismatic)");
  gen->add_option("--amplitude", spec.amplitude, "Motion amplitude multiplier")->capture_default_str();
  gen->add_option("--motion", motion, "monotone | sinusoidal")->capture_default_str();
  gen->add_option("--noise", spec.noise, "Gaussian point noise sigma")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->required();

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a rearticulable model to a sequence");
  FitConfig cfg;
  std::string fit_in, fit_out, flow_source, canonical = "all";
  bool no_group = false, sum_energies = false, spherical = false;
  int log_every = 100;
  double w_flow = cfg.weights.flow, w_cd = cfg.weights.cd, w_emd = cfg.weights.emd;
  fit->add_option("--input", fit_in, "Sequence directory")->required();
  fit->add_option("--out", fit_out, "Output model JSON")->required();
  fit->add_option("--flow", flow_source, "gt | mnn (default: gt when frames carry flow)");
  fit->add_option("--canonical", canonical, "all | K | i,j,k candidate canonical frames")->capture_default_str();
  fit->add_option("--max-parts", cfg.max_parts, "Maximum number of parts")->capture_default_str();
  fit->add_option("--iters-stage1", cfg.iters_stage1, "Relaxed-stage iterations")->capture_default_str();
  fit->add_option("--iters-final", cfg.iters_final, "Final-stage iterations")->capture_default_str();
  fit->add_option("--refine-rounds", cfg.refine_rounds, "Polish/relabel rounds after stage 1 (0 disables)")
      ->capture_default_str();
  fit->add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
  fit->add_option("--eps-merge", cfg.eps_merge, "Part merging threshold")->capture_default_str();
  fit->add_option("--lambda-spatial", cfg.lambda_spatial, "Spatial weight in the projection energy")
      ->capture_default_str();
  fit->add_option("--lambda-1dof", cfg.lambda_1dof, "1-DOF weight in the projection energy")->capture_default_str();
  fit->add_option("--w-cd", w_cd, "Chamfer weight")->capture_default_str();
  fit->add_option("--w-emd", w_emd, "EMD weight")->capture_default_str();
  fit->add_option("--w-flow", w_flow, "Flow weight (0 disables the flow term)")->capture_default_str();
  fit->add_flag("--no-group-energy", no_group, "Select the canonical frame by E_project alone");
  fit->add_flag("--sum-energies", sum_energies, "Sum energy terms over points instead of averaging");
  fit->add_flag("--spherical", spherical, "Use 3-DOF spherical joints instead of screws");
  fit->add_option("--log-every", log_every, "Progress CSV interval on stderr (0 disables)")->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a fitted model against ground truth");
  std::string ev_model, ev_gt, ev_report;
  EvalOptions eval_opts;
  ev->add_option("--model", ev_model, "Model JSON")->required();
  ev->add_option("--gt", ev_gt, "Dataset directory with ground truth")->required();
  ev->add_option("--report", ev_report, "Output report JSON")->required();
  ev->add_option("--delta", eval_opts.delta, "Flow accuracy threshold")->capture_default_str();
  ev->add_option("--seed", eval_opts.seed, "Seed for constraint sampling")->capture_default_str();

  // retarget
  auto* rt = app.add_subcommand("retarget", "Repose a model from sparse point constraints");
  std::string rt_model, rt_constraints, rt_out;
  IkConfig ik;
  rt->add_option("--model", rt_model, "Model JSON")->required();
  rt->add_option("--constraints", rt_constraints, "Constraint JSON")->required();
  rt->add_option("--out", rt_out, "Output PLY")->required();
  rt->add_option("--iters", ik.iters, "IK iterations")->capture_default_str();
  rt->add_option("--lr", ik.lr, "IK learning rate")->capture_default_str();
  rt->add_option("--prior", ik.prior_weight, "Weight of the pull towards the rest states")->capture_default_str();

  // serve
  auto* sv = app.add_subcommand("serve", "Serve a fitted model over HTTP");
  ServeOptions serve_opts;
  std::string sv_model, sv_data;
  sv->add_option("--model", sv_model, "Model JSON")->required();
  sv->add_option("--data", sv_data, "Sequence directory for /cloud");
  sv->add_option("--port", serve_opts.port, "Port")->capture_default_str();
  sv->add_option("--host", serve_opts.host, "Bind address")->capture_default_str();
  sv->add_option("--ik-iters", serve_opts.ik_iters, "IK iterations per /retarget request")->capture_default_str();
  sv->add_option("--static", serve_opts.static_dir, "Directory served at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    apply_threads(threads);

    if (*gen) {
      try {
        spec.topology = topology_from_string(topology);
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
      spec.joint_types = parse_joint_types(joint_types);
      if (motion == "monotone") {
        spec.motion = Motion::Monotone;
      } else if (motion == "sinusoidal") {
        spec.motion = Motion::Sinusoidal;
      } else {
        throw UsageError("unknown motion '" + motion + "'");
      }
      const SynthResult data = generate(spec);
      write_dataset(gen_out, data);
      std::cerr << "wrote " << spec.frames << " frames of " << spec.points << " points to " << gen_out << "\n";
      return kExitOk;
    }

    if (*fit) {
      const auto start = std::chrono::steady_clock::now();
      Sequence seq = read_sequence(fit_in);
      seq.validate();
      FlowSource source;
      if (flow_source.empty()) {
        const bool has_flow = std::all_of(seq.frames.begin(), seq.frames.end(),
                                          [](const PointCloud& f) { return f.flow.has_value(); });
        source = has_flow ? FlowSource::GroundTruth : FlowSource::Mnn;
      } else if (flow_source == "gt") {
        source = FlowSource::GroundTruth;
      } else if (flow_source == "mnn") {
        source = FlowSource::Mnn;
      } else {
        throw UsageError("--flow must be gt or mnn");
      }
      cfg.weights = {w_cd, w_emd, w_flow};
      cfg.use_group_energy = !no_group;
      cfg.reduction = sum_energies ? Reduction::Sum : Reduction::Mean;
      cfg.joint_model = spherical ? JointModel::Spherical : JointModel::Screw;
      cfg.log_every = log_every;
      cfg.log = &std::cerr;
      try {
        cfg.validate();
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
      const auto candidates = parse_candidates(canonical, seq.num_frames());
      const auto flows = build_flows(seq, source);
      const CanonicalChoice choice = select_canonical(seq, flows, candidates, cfg);
      for (std::size_t i = 0; i < choice.candidates.size(); ++i) {
        std::cerr << "candidate " << choice.candidates[i] << " score " << choice.scores[i] << "\n";
      }
      const ArticulatedModel model = final_fit(choice.model, seq, flows, cfg);
      save_model(fit_out, model);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cerr << "canonical frame " << model.canonical_index << ", " << model.num_parts() << " parts, "
                << secs << " s\n";
      return kExitOk;
    }

    if (*ev) {
      const auto start = std::chrono::steady_clock::now();
      const ArticulatedModel model = load_model(ev_model);
      const Sequence seq = read_sequence(ev_gt);
      const GroundTruth gt = load_ground_truth(ev_gt);
      EvalReport report = evaluate(model, seq, gt, eval_opts);
      report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      write_file_bytes(ev_report, report_to_json(report));
      std::cout << report_to_json(report);
      return kExitOk;
    }

    if (*rt) {
      const ArticulatedModel model = load_model(rt_model);
      std::vector<PointConstraint> constraints;
      try {
        constraints = load_constraints(rt_constraints);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::Format) throw UsageError(e.what());
        throw;
      }
      const IkResult res = retarget_ik(model, constraints, ik);
      PointCloud posed;
      posed.points = pose_cloud(model, res.states);
      posed.labels = model.canonical_labels;
      write_ply(rt_out, posed);
      std::cerr << "constraint mse " << res.mse << "\n";
      return kExitOk;
    }

    if (*sv) {
      serve_opts.model_path = sv_model;
      serve_opts.data_dir = sv_data;
      return run_server(serve_opts);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

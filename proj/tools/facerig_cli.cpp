// facerig command line: asset generation, training, evaluation, animation,
// export and the HTTP service. Errors go to stderr as one JSON object and the
// process exits nonzero.

#include <csignal>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "facerig/adapter.hpp"
#include "facerig/animation.hpp"
#include "facerig/datagen.hpp"
#include "facerig/io.hpp"
#include "facerig/model.hpp"
#include "facerig/rig.hpp"
#include "facerig/service.hpp"

namespace {

using namespace facerig;
using nlohmann::json;

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

void report_error(const std::string& kind, const std::string& message, const std::vector<std::string>& details = {}) {
  json err = {{"error", {{"kind", kind}, {"message", message}}}};
  if (!details.empty()) err["error"]["details"] = details;
  std::cerr << err.dump() << std::endl;
}

unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

std::string default_store() {
  const char* env = std::getenv("FACERIG_STORE");
  return env != nullptr && *env != '\0' ? env : "facerig_store";
}

DatasetSplit parse_split(const std::string& text) {
  DatasetSplit split;
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  if (!(in >> split.train >> c1 >> split.val >> c2 >> split.test) || c1 != ',' || c2 != ',' || !in.eof()) {
    throw ContractViolation("--split must look like 8000,1000,1000");
  }
  return split;
}

std::string format_seconds(double mean, double stddev) {
  std::ostringstream os;
  os << std::setprecision(3) << std::scientific << mean << " +/- " << stddev << " s";
  return os.str();
}

void require_same_k(const CharacterRig& rig, const AdapterNet& net) {
  if (rig.channel_count() != net.config.out_dim) {
    throw ContractViolation("checkpoint predicts K=" + std::to_string(net.config.out_dim) + " channels but rig '" +
                            rig.name + "' has K=" + std::to_string(rig.channel_count()));
  }
}

volatile std::sig_atomic_t g_stop_requested = 0;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"facerig - facial expression retargeting engine"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Random seed (all commands accept it)")->capture_default_str();
  std::function<void()> action;

  // gen-model
  auto* gen_model = app.add_subcommand("gen-model", "Generate a synthetic morphable face model");
  SyntheticModelOptions model_opts;
  std::string model_out;
  gen_model->add_option("--seed", seed);
  gen_model->add_option("--vertices", model_opts.vertex_count, "Mesh vertex count")->capture_default_str();
  gen_model->add_option("--identity-dim", model_opts.identity_dim)->capture_default_str();
  gen_model->add_option("--out,-o", model_out)->required();
  gen_model->callback([&] {
    action = [&] {
      model_opts.seed = seed;
      const MorphableModel model = generate_synthetic_model(model_opts);
      save_model(model_out, model);
      std::cout << "model: " << model.vertex_count() << " vertices, identity dim " << model.identity_dim()
                << ", expression dim " << kExpressionDim << " -> " << model_out << '\n';
    };
  });

  // gen-rig
  auto* gen_rig = app.add_subcommand("gen-rig", "Generate a synthetic character rig on a model's mesh");
  SyntheticRigOptions rig_opts;
  std::string rig_model, rig_out;
  gen_rig->add_option("--seed", seed);
  gen_rig->add_option("--model", rig_model)->required();
  gen_rig->add_option("--blendshapes,-k", rig_opts.blendshapes, "Channel count (e.g. 25, 66, 113)")
      ->capture_default_str();
  gen_rig->add_option("--name", rig_opts.name);
  gen_rig->add_option("--out,-o", rig_out)->required();
  gen_rig->callback([&] {
    action = [&] {
      rig_opts.seed = seed;
      const CharacterRig rig = generate_synthetic_rig(load_model(rig_model), rig_opts);
      save_rig(rig_out, rig);
      std::cout << "rig '" << rig.name << "': " << rig.channel_count() << " blendshapes -> " << rig_out << '\n';
    };
  });

  // gen-dataset
  auto* gen_dataset = app.add_subcommand("gen-dataset", "Generate (gamma, alpha) training pairs for a rig");
  std::string ds_rig, ds_model, ds_rules, ds_out, ds_split = "8000,1000,1000";
  DatasetOptions ds_opts;
  ds_opts.threads = default_threads();
  gen_dataset->add_option("--seed", seed);
  gen_dataset->add_option("--rig", ds_rig)->required();
  gen_dataset->add_option("--model", ds_model)->required();
  gen_dataset->add_option("--rules", ds_rules, "Rule file restricting channel combinations");
  gen_dataset->add_option("--count", ds_opts.count)->capture_default_str();
  gen_dataset->add_option("--split", ds_split, "train,val,test sizes")->capture_default_str();
  gen_dataset->add_option("--threads", ds_opts.threads)->capture_default_str();
  gen_dataset->add_option("--out,-o", ds_out)->required();
  gen_dataset->callback([&] {
    action = [&] {
      ds_opts.seed = seed;
      ds_opts.split = parse_split(ds_split);
      const RuleSet rules = ds_rules.empty() ? RuleSet{} : rules_from_json(read_text_file(ds_rules));
      const GeneratedDataset ds = generate_dataset(load_rig(ds_rig), load_model(ds_model), rules, ds_opts);
      save_dataset(ds_out, ds);
      std::cout << "dataset for '" << ds.rig_name << "': " << ds.train.size() << "/" << ds.val.size() << "/"
                << ds.test.size() << " train/val/test, " << ds.resampled << " resampled -> " << ds_out << '\n';
    };
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "Train an adapter on a dataset");
  std::string tr_dataset, tr_out, tr_activation = "leaky_relu";
  AdapterConfig tr_config;
  TrainConfig tr_train;
  bool tr_clamp = true;
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--dataset", tr_dataset)->required();
  train_cmd->add_option("--hidden", tr_config.hidden_dim)->capture_default_str();
  train_cmd->add_option("--activation", tr_activation)
      ->check(CLI::IsMember({"relu", "leaky_relu"}))
      ->capture_default_str();
  train_cmd->add_flag("--clamp,!--no-clamp", tr_clamp, "Clamp outputs to [0,1] (default on)");
  train_cmd->add_option("--epochs", tr_train.epochs)->capture_default_str();
  train_cmd->add_option("--lr", tr_train.learning_rate)->capture_default_str();
  train_cmd->add_option("--batch", tr_train.batch_size)->capture_default_str();
  train_cmd->add_option("--out,-o", tr_out)->required();
  train_cmd->callback([&] {
    action = [&] {
      const GeneratedDataset ds = load_dataset(tr_dataset);
      tr_config.out_dim = ds.channel_count();
      tr_config.activation = parse_activation(tr_activation);
      tr_config.clamp_output = tr_clamp;
      tr_train.seed = seed;
      const TrainResult r = train(tr_config, tr_train, ds);
      save_checkpoint(tr_out, {r.net, seed, r.report});
      std::cout << tr_config.layers() << " hidden " << tr_config.hidden_dim << ": best epoch " << r.report.best_epoch;
      if (!r.report.val_mae.empty()) std::cout << ", val MAE " << r.report.val_mae[r.report.best_epoch];
      if (r.report.test_mae) std::cout << ", test MAE " << *r.report.test_mae;
      std::cout << " (" << std::fixed << std::setprecision(1) << r.report.seconds << " s) -> " << tr_out << '\n';
    };
  });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Mean absolute error of a checkpoint on a dataset split");
  std::string ev_dataset, ev_checkpoint, ev_split = "test";
  eval_cmd->add_option("--seed", seed);
  eval_cmd->add_option("--dataset", ev_dataset)->required();
  eval_cmd->add_option("--checkpoint", ev_checkpoint)->required();
  eval_cmd->add_option("--split", ev_split)->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  eval_cmd->callback([&] {
    action = [&] {
      const GeneratedDataset ds = load_dataset(ev_dataset);
      const Checkpoint ck = load_checkpoint(ev_checkpoint);
      const auto& pairs = ev_split == "train" ? ds.train : ev_split == "val" ? ds.val : ds.test;
      const double mae = evaluate_mae(ck.net, pairs);
      std::cout << json{{"split", ev_split}, {"samples", pairs.size()}, {"mae", mae}}.dump() << '\n';
    };
  });

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train the architecture grid and print a table sorted by MAE");
  std::string ab_dataset, ab_out;
  TrainConfig ab_train;
  ablate->add_option("--seed", seed);
  ablate->add_option("--dataset", ab_dataset)->required();
  ablate->add_option("--epochs", ab_train.epochs)->capture_default_str();
  ablate->add_option("--lr", ab_train.learning_rate)->capture_default_str();
  ablate->add_option("--out,-o", ab_out, "Also write the table as JSON");
  ablate->callback([&] {
    action = [&] {
      const GeneratedDataset ds = load_dataset(ab_dataset);
      ab_train.seed = seed;
      auto rows = run_ablation_grid(ds, standard_ablation_grid(ds.channel_count()), ab_train);
      std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.mae < b.mae; });
      json table = json::array();
      std::cout << std::left << std::setw(6) << "rank" << std::setw(36) << "layers" << std::setw(8) << "hidden"
                << "test_mae\n";
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        std::cout << std::left << std::setw(6) << i + 1 << std::setw(36) << r.config.layers() << std::setw(8)
                  << r.config.hidden_dim << std::setprecision(6) << std::fixed << r.mae << '\n';
        table.push_back({{"layers", r.config.layers()},
                         {"hidden", r.config.hidden_dim},
                         {"activation", to_string(r.config.activation)},
                         {"clamp", r.config.clamp_output},
                         {"test_mae", r.mae},
                         {"best_epoch", r.report.best_epoch}});
      }
      if (!ab_out.empty()) write_text_file_atomic(ab_out, table.dump(2));
    };
  });

  // gen-landmarks
  auto* gen_lm = app.add_subcommand("gen-landmarks", "Synthesize a 68-point landmark sequence driven by a rig");
  std::string lm_rig, lm_out;
  SyntheticSequenceOptions lm_opts;
  gen_lm->add_option("--seed", seed);
  gen_lm->add_option("--rig", lm_rig)->required();
  gen_lm->add_option("--frames", lm_opts.frames)->capture_default_str();
  gen_lm->add_option("--fps", lm_opts.fps)->capture_default_str();
  gen_lm->add_option("--noise", lm_opts.noise, "Landmark noise in pixels")->capture_default_str();
  gen_lm->add_option("--out,-o", lm_out)->required();
  gen_lm->callback([&] {
    action = [&] {
      lm_opts.seed = seed;
      const SyntheticSequence seq = generate_synthetic_sequence(load_rig(lm_rig), lm_opts);
      save_landmarks(lm_out, seq.landmarks);
      std::cout << "landmarks: " << seq.landmarks.frames.size() << " frames -> " << lm_out << '\n';
    };
  });

  // animate
  auto* animate = app.add_subcommand("animate", "Estimate a blendshape track from landmarks and export it");
  std::string an_model, an_rig, an_checkpoint, an_landmarks, an_out, an_track_out;
  int an_ramp = 0;
  unsigned an_threads = 1;
  bool an_timing = false;
  animate->add_option("--seed", seed);
  animate->add_option("--model", an_model)->required();
  animate->add_option("--rig", an_rig)->required();
  animate->add_option("--checkpoint", an_checkpoint)->required();
  animate->add_option("--landmarks", an_landmarks)->required();
  animate->add_option("--ramp-frames", an_ramp, "Expand a single image into a zero-peak-zero clip");
  animate->add_option("--threads", an_threads)->capture_default_str();
  animate->add_flag("--report-timing", an_timing, "Print per-frame fit + inference time");
  animate->add_option("--track-out", an_track_out, "Also write the editable track");
  animate->add_option("--out,-o", an_out)->required();
  animate->callback([&] {
    action = [&] {
      const MorphableModel model = load_model(an_model);
      const CharacterRig rig = load_rig(an_rig);
      const Checkpoint ck = load_checkpoint(an_checkpoint);
      const LandmarkSequence seq = load_landmarks(an_landmarks);
      require_same_k(rig, ck.net);
      std::vector<double> seconds;
      FrameTrack track = estimate_track(seq, model, IdentityParams::zero(model.identity_dim()), ck.net, {},
                                        std::max(1u, an_threads), &seconds);
      if (an_ramp > 0) {
        if (track.frame_count() != 1) throw ContractViolation("--ramp-frames applies only to single-image inputs");
        track = expand_single_frame(track, an_ramp);
      }
      export_track(track, rig, seq.fps.value_or(kDefaultFps), an_out);
      if (!an_track_out.empty()) write_text_file_atomic(an_track_out, track_to_json(track));
      std::cout << "animation: " << track.frame_count() << " frames, " << track.keyframes.size() << " keyframes -> "
                << an_out << '\n';
      if (an_timing) {
        const double n = static_cast<double>(seconds.size());
        const double mean = std::accumulate(seconds.begin(), seconds.end(), 0.0) / n;
        double ss = 0.0;
        for (double s : seconds) ss += (s - mean) * (s - mean);
        const double sd = seconds.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        std::cout << "per-frame time (fit + adapter): " << format_seconds(mean, sd) << " over " << seconds.size()
                  << " frames\n";
      }
    };
  });

  // export
  auto* export_cmd = app.add_subcommand("export", "Write a stored project's animation file");
  std::string ex_store = default_store(), ex_project, ex_out;
  export_cmd->add_option("--seed", seed);
  export_cmd->add_option("--store", ex_store, "Project store (env FACERIG_STORE)")->capture_default_str();
  export_cmd->add_option("--project", ex_project)->required();
  export_cmd->add_option("--out,-o", ex_out)->required();
  export_cmd->callback([&] {
    action = [&] {
      ProjectService service(ex_store);
      const ExportPayload p = service.export_project(ex_project);
      write_text_file_atomic(ex_out, p.body);
      std::cout << "export " << p.hash << " -> " << ex_out << '\n';
    };
  });

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  std::string sv_store = default_store(), sv_host = "127.0.0.1";
  int sv_port = 8080;
  serve->add_option("--seed", seed);
  serve->add_option("--store", sv_store, "Project store (env FACERIG_STORE)")->capture_default_str();
  serve->add_option("--host", sv_host, "Bind address")->capture_default_str();
  serve->add_option("--port", sv_port)->capture_default_str();
  serve->callback([&] {
    action = [&] {
      ProjectService service(sv_store);
      HttpServer server(service);
      const int port = server.bind(sv_host, sv_port);
      std::cout << "listening on http://" << sv_host << ":" << port << " (store " << sv_store << ")" << std::endl;
      std::signal(SIGINT, [](int) { g_stop_requested = 1; });
      std::signal(SIGTERM, [](int) { g_stop_requested = 1; });
      std::jthread watcher([&](std::stop_token st) {
        while (!st.stop_requested() && g_stop_requested == 0) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        server.stop();
      });
      server.serve();
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return kExitUsage;
  }

  try {
    action();
  } catch (const ServiceError& e) {
    report_error(e.kind(), e.what(), e.details());
    return kExitFailure;
  } catch (const Error& e) {
    report_error(e.kind(), e.what());
    return kExitFailure;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return kExitFailure;
  }
  return 0;
}

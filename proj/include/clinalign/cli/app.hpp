#pragma once

// Command-line front end. run() is the whole program minus process setup so
// tests can drive it in-process with their own streams and environment.

#include <csignal>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clinalign/cli/commands.hpp"
#include "clinalign/cli/config.hpp"
#include "clinalign/cli/serve.hpp"

namespace clinalign::cli {

struct PrefsServeOptions {
  std::string cases;
  std::string key;
  std::string images;
  std::string log;  // default <out>/rankings.jsonl
  std::string host = "127.0.0.1";
  int port = 8080;
};

namespace detail {

inline httplib::Server* g_server = nullptr;

extern "C" inline void stop_server(int) {
  if (g_server) g_server->stop();
}

}  // namespace detail

inline RankingService make_service(const RunConfig& c, const PrefsServeOptions& o, RunRecord& rec) {
  if (o.cases.empty() || o.key.empty()) throw LoadError("prefs-serve needs --cases and --key");
  rec.substreams["ui"] = c.substream("ui");
  ServeOptions so;
  so.ui_seed = rec.substreams["ui"];
  so.image_dir = o.images;
  so.log_path = o.log.empty() ? c.out() / "rankings.jsonl" : fs::path(o.log);
  return RankingService(load_cases(o.cases), load_key(o.key), so);
}

// Blocks until SIGINT/SIGTERM.
inline void cmd_prefs_serve(const RunConfig& c, const PrefsServeOptions& o, std::ostream& log,
                            const std::vector<std::string>& args) {
  RunRecord rec{"prefs-serve",
                {{"cases", o.cases}, {"key", o.key}, {"images", o.images}, {"log", o.log}, {"host", o.host},
                 {"port", o.port}},
                {},
                {}};
  RankingService svc = make_service(c, o, rec);
  httplib::Server srv;
  // httplib's default adds SO_REUSEPORT, which lets a second server share a
  // port that is already taken.
  srv.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  });
  svc.attach(srv);
  if (!srv.bind_to_port(o.host, o.port))
    throw Error("cannot bind " + o.host + ":" + std::to_string(o.port) + " (port busy?)");
  rec.outputs.push_back(o.log.empty() ? c.out() / "rankings.jsonl" : fs::path(o.log));
  write_run_manifest(c, rec, args);
  log << "serving " << o.host << ":" << o.port << "\n" << std::flush;
  detail::g_server = &srv;
  std::signal(SIGINT, detail::stop_server);
  std::signal(SIGTERM, detail::stop_server);
  srv.listen_after_bind();
  detail::g_server = nullptr;
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
               const EnvLookup& env = process_env) {
  CLI::App app{"Clinical alignment scoring toolkit", "clinalign"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  FlagLayer fl;
  std::string manifest, out_dir, generator_url, critic, evaluator, oof;
  std::uint64_t seed = 0;
  auto* o_config = app.add_option("--config", config_file, "JSON config file (a run manifest also works)");
  auto* o_manifest = app.add_option("--manifest", manifest, "Dataset manifest");
  auto* o_out = app.add_option("--out", out_dir, "Output directory");
  auto* o_seed = app.add_option("--seed", seed, "Root seed");
  auto* o_gen = app.add_option("--generator-url", generator_url, "Enrichment generator endpoint");
  auto* o_critic = app.add_option("--critic", critic, "Training-critic encoder id");
  auto* o_eval = app.add_option("--evaluator", evaluator, "Metric-evaluator encoder id");
  auto* o_oof = app.add_option("--oof-evaluator", oof, "Out-of-family evaluator encoder id");

  // score
  ScoreOptions score_o;
  auto* score = app.add_subcommand("score", "Per-sample and per-method CAS tables");
  score->add_option("--probe", score_o.probe, "Probe file for the metric evaluator");
  score->add_option("--dd", score_o.dd_mode, "dd variant: indicator or prob");

  // tail
  TailOptions tail_o;
  auto* tail = app.add_subcommand("tail", "Low-alignment tail against the real-image quartile");
  tail->add_option("--scores", tail_o.scores, "Score table(s) with id,method,vdc,ccs,dd,sfs,cas")->required();
  tail->add_option("--real-method", tail_o.real_method, "Method label carried by real-image rows");
  tail->add_option("--dataset", tail_o.dataset, "Dataset name for the report");

  // corr
  CorrOptions corr_o;
  auto* corr = app.add_subcommand("corr", "Pearson/Spearman between CAS and downstream utility");
  corr->add_option("--input", corr_o.input, "CSV with name,cas,utility")->required();

  // audit
  AuditOptions audit_o;
  auto* audit = app.add_subcommand("audit", "Near-duplicate and nearest-neighbour memorization audit");
  audit->add_option("--train-images", audit_o.train_images, "Directory of training PNGs");
  audit->add_option("--generated-images", audit_o.generated_images, "Directory with one PNG folder per method");
  audit->add_option("--dataset", audit_o.dataset, "Dataset name for the report");
  audit->add_option("--ssim-threshold", audit_o.ssim_threshold, "Flag when SSIM exceeds this");
  audit->add_option("--phash-threshold", audit_o.phash_threshold, "Flag when Hamming distance is at most this");
  audit->add_flag("--nn", audit_o.nn, "Also report nearest-neighbour distance symmetry from the manifest");

  // prefs-fit
  PrefsFitOptions fit_o;
  auto* fit = app.add_subcommand("prefs-fit", "Bradley-Terry strengths, top-1 rates and rank distributions");
  fit->add_option("--rankings", fit_o.rankings, "Ranking log (JSONL)")->required();
  fit->add_option("--key", fit_o.key, "Sealed token-to-method key")->required();
  fit->add_option("--cas", fit_o.cas, "Per-method CAS (JSON object) for the preference association");
  fit->add_option("--resamples", fit_o.resamples, "Bootstrap resamples");
  fit->add_option("--level", fit_o.level, "Confidence level");

  // prefs-serve
  PrefsServeOptions serve_o;
  auto* serve = app.add_subcommand("prefs-serve", "Serve blinded ranking sessions over HTTP");
  serve->add_option("--cases", serve_o.cases, "Case set (JSON)")->required();
  serve->add_option("--key", serve_o.key, "Sealed token-to-method key")->required();
  serve->add_option("--images", serve_o.images, "Image directory served under /image/");
  serve->add_option("--log", serve_o.log, "Ranking log (JSONL, appended)");
  serve->add_option("--host", serve_o.host, "Bind address");
  serve->add_option("--port", serve_o.port, "Port");

  // rewardlab
  RewardLabOptions lab_o;
  auto* lab = app.add_subcommand("rewardlab", "Truncated-backprop reward finetuning sweep on the toy task");
  lab->add_option("--K", lab_o.K, "Backprop depths to sweep")->delimiter(',');
  lab->add_option("--T", lab_o.T_train, "Training step counts to sweep")->delimiter(',');
  lab->add_option("--M", lab_o.M, "Trajectories per prompt to sweep")->delimiter(',');
  lab->add_option("--w-dd-grid", lab_o.w_dd, "dd weights to sweep")->delimiter(',');
  lab->add_option("--steps", lab_o.steps, "Optimizer steps per cell");
  lab->add_option("--batch", lab_o.batch, "Prompts per step");
  lab->add_option("--lr", lab_o.learning_rate, "Adapter learning rate");
  double lambda_diff = 0, lambda_cam = 0, w_vdc = 0, w_ccs = 0, w_dd = 0, w_sfs = 0, eta = 0;
  auto* o_ld = lab->add_option("--lambda-diff", lambda_diff, "Weight of the diffusion loss");
  auto* o_lc = lab->add_option("--lambda-cam", lambda_cam, "Weight of the alignment reward");
  auto* o_wv = lab->add_option("--w-vdc", w_vdc, "Reward weight on VDC");
  auto* o_wc = lab->add_option("--w-ccs", w_ccs, "Reward weight on CCS");
  auto* o_wd = lab->add_option("--w-dd", w_dd, "Reward weight on dd (single cell)");
  auto* o_ws = lab->add_option("--w-sfs", w_sfs, "Reward weight on SFS");
  auto* o_eta = lab->add_option("--eta", eta, "Stochasticity of the reverse update");

  // probe-train / augment
  ProbeTrainOptions probe_o;
  auto* probe = app.add_subcommand("probe-train", "Train the linear probe on an encoder's train split");
  probe->add_option("--encoder", probe_o.encoder, "Encoder id (default: metric evaluator)");
  probe->add_option("--output", probe_o.output, "Probe file to write");
  probe->add_option("--epochs", probe_o.probe.epochs, "Training epochs");
  probe->add_option("--batch-size", probe_o.probe.batch_size, "Minibatch size");
  probe->add_option("--lr", probe_o.probe.learning_rate, "Adam learning rate");

  AugmentOptions aug_o;
  auto* aug = app.add_subcommand("augment", "Real+synthetic batch mixing for the downstream classifier");
  aug->add_option("--encoder", aug_o.encoder, "Encoder id (default: metric evaluator)");
  aug->add_option("--mix", aug_o.mix, "Synthetic fractions per batch")->delimiter(',');
  aug->add_option("--epochs", aug_o.probe.epochs, "Training epochs");
  aug->add_option("--batch-size", aug_o.probe.batch_size, "Minibatch size");
  aug->add_option("--lr", aug_o.probe.learning_rate, "Adam learning rate");

  KShotOptions kshot_o;
  auto* kshot = app.add_subcommand("kshot", "Stratified k-shot subset of the train split");
  kshot->add_option("--k", kshot_o.k, "Samples per class")->required();

  ValidatePromptsOptions val_o;
  auto* val = app.add_subcommand("validate-prompts", "Check generator output against a domain schema");
  val->add_option("--schema", val_o.schema, "Domain schema (JSON)")->required();
  val->add_option("--candidates", val_o.candidates, "JSONL of sample_id,label,candidate")->required();
  val->add_flag("--strict", val_o.strict, "Exit nonzero when any candidate is rejected");

  GenPromptsOptions gen_o;
  auto* gen = app.add_subcommand("gen-prompts", "Request enriched-prompt candidates from the generator");
  gen->add_option("--requests", gen_o.requests, "JSONL of sample_id,label[,image_ref]")->required();
  gen->add_option("--domain", gen_o.domain, "Domain name passed to the generator")->required();
  gen->add_option("--offline", gen_o.offline, "Directory of canned responses");

  PassRateOptions pass_o;
  auto* pass = app.add_subcommand("pass-rate", "Checklist audit pass rate per method");
  pass->add_option("--verdicts", pass_o.verdicts, "Checklist verdicts (JSONL)")->required();
  pass->add_option("--checklists", pass_o.checklists, "Checklist definitions (JSON)")->required();

  DiversityOptions div_o;
  auto* div = app.add_subcommand("diversity", "Mean pairwise diversity per method");
  div->add_option("--pairs", div_o.pairs, "CSV of method,prompt_id,sample_a,sample_b,distance")->required();

  std::vector<std::string> argv_store{"clinalign"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    // Name the stray word when it is the subcommand that was not recognised.
    std::string what = e.what();
    for (std::size_t i = 0; i < args.size(); ++i) {
      const bool is_value = i > 0 && args[i - 1].rfind("--", 0) == 0 && args[i - 1].find('=') == std::string::npos &&
                            args[i - 1] != "--help" && args[i - 1] != "--version";
      if (args[i].empty() || args[i][0] == '-' || is_value) continue;
      if (!app.get_subcommand_no_throw(args[i])) what = "unknown subcommand '" + args[i] + "'";
      break;
    }
    err << "clinalign: " << what << "\n\n" << app.help();
    return 2;
  }

  auto take = [](CLI::Option* o, auto& dst, const auto& v) {
    if (o->count()) dst = v;
  };
  take(o_manifest, fl.manifest, manifest);
  take(o_out, fl.out_dir, out_dir);
  take(o_seed, fl.seed, seed);
  take(o_gen, fl.generator_url, generator_url);
  take(o_critic, fl.critic, critic);
  take(o_eval, fl.evaluator, evaluator);
  take(o_oof, fl.oof_evaluator, oof);
  take(o_ld, fl.lambda_diff, lambda_diff);
  take(o_lc, fl.lambda_cam, lambda_cam);
  take(o_wv, fl.w_vdc, w_vdc);
  take(o_wc, fl.w_ccs, w_ccs);
  take(o_wd, fl.w_dd, w_dd);
  take(o_ws, fl.w_sfs, w_sfs);
  take(o_eta, fl.eta, eta);

  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    const RunConfig cfg =
        resolve_config(o_config->count() ? std::optional<std::string>(config_file) : std::nullopt, env, fl);
    RunRecord rec;
    int code = 0;
    if (sub == "score") {
      rec = cmd_score(cfg, score_o, out);
    } else if (sub == "tail") {
      rec = cmd_tail(cfg, tail_o, out);
    } else if (sub == "corr") {
      rec = cmd_corr(cfg, corr_o, out);
    } else if (sub == "audit") {
      rec = cmd_audit(cfg, audit_o, out);
    } else if (sub == "prefs-fit") {
      rec = cmd_prefs_fit(cfg, fit_o, out);
    } else if (sub == "prefs-serve") {
      cmd_prefs_serve(cfg, serve_o, out, args);
      return 0;
    } else if (sub == "rewardlab") {
      rec = cmd_rewardlab(cfg, lab_o, out);
    } else if (sub == "probe-train") {
      rec = cmd_probe_train(cfg, probe_o, out);
    } else if (sub == "augment") {
      rec = cmd_augment(cfg, aug_o, out);
    } else if (sub == "kshot") {
      rec = cmd_kshot(cfg, kshot_o, out);
    } else if (sub == "validate-prompts") {
      ValidateOutcome v;
      rec = cmd_validate_prompts(cfg, val_o, out, &v);
      if (val_o.strict && v.invalid > 0) code = 1;
    } else if (sub == "gen-prompts") {
      rec = cmd_gen_prompts(cfg, gen_o, out);
    } else if (sub == "pass-rate") {
      rec = cmd_pass_rate(cfg, pass_o, out);
    } else if (sub == "diversity") {
      rec = cmd_diversity(cfg, div_o, out);
    }
    write_run_manifest(cfg, rec, args);
    return code;
  } catch (const std::exception& e) {
    err << "clinalign " << sub << ": " << e.what() << "\n";
    return 1;
  }
}

}  // namespace clinalign::cli

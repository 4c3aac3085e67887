#include "edgedepth/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>

#include "edgedepth/gradcheck.hpp"
#include "edgedepth/loss_metrics.hpp"
#include "edgedepth/trainer.hpp"

namespace edgedepth {

namespace fs = std::filesystem;

namespace {

void print_header(const RunConfig& cfg, std::ostream& out) {
  out << "--- resolved config ---\n" << cfg.resolved_text() << "-----------------------\n";
}

std::vector<DepthSample> load_split(const RunConfig& cfg, const std::string& split) {
  const std::string dir = (fs::path(cfg.data_root) / split).string();
  std::vector<DepthSample> samples;
  for (const std::string& id : list_sample_ids(dir)) {
    samples.push_back(load_sample(dir, id));
  }
  if (samples.empty()) {
    throw ConfigError("no samples found under '" + dir + "'");
  }
  return samples;
}

DepthPair make_pair(const Raster& pred, const DepthSample& sample, const RunConfig& cfg) {
  DepthPair pair;
  pair.height = pred.height;
  pair.width = pred.width;
  pair.pred.assign(pred.data.begin(), pred.data.end());
  pair.gt.assign(sample.depth.data.begin(), sample.depth.data.end());
  pair.mask = sample_mask(sample);
  pair.cap_min = cfg.cap_min;
  pair.cap_max = cfg.cap_max;
  return pair;
}

}  // namespace

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  print_header(cfg, out);

  const std::vector<DepthSample> dataset = load_split(cfg, "train");
  DepthNet net(cfg.model, cfg.seed);
  out << "parameters: " << net.params().total_values() << " values in "
      << net.params().size() << " tensors\n";

  fs::create_directories(cfg.out_dir);
  const std::string curve_path = (fs::path(cfg.out_dir) / "loss_curve.csv").string();
  const std::string final_path = (fs::path(cfg.out_dir) / "final.ecdw").string();
  const std::string best_path = (fs::path(cfg.out_dir) / "best.ecdw").string();

  std::ofstream curve(curve_path, std::ios::trunc);
  if (!curve) {
    throw ConfigError("cannot write loss curve to '" + curve_path + "'");
  }
  TrainResult result =
      train_loop(net, cfg, dataset, curve, &out, [&](int, double, bool is_best) {
        if (is_best) save_checkpoint(best_path, net.params());
      });
  save_checkpoint(final_path, net.params());

  out << "best epoch " << result.best_epoch << " loss " << std::setprecision(8)
      << result.best_epoch_loss << "\n";
  out << "wrote " << curve_path << ", " << final_path << ", " << best_path << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& split, std::ostream& out) {
  cfg.validate();
  print_header(cfg, out);

  DepthNet net(cfg.model, cfg.seed);
  load_checkpoint(checkpoint_path, net.params());

  const std::string dir = (fs::path(cfg.data_root) / split).string();
  const std::vector<std::string> ids = list_sample_ids(dir);
  if (ids.empty()) {
    throw ConfigError("no samples found under '" + dir + "'");
  }

  fs::create_directories(cfg.out_dir);
  const std::string csv_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
  std::ofstream csv(csv_path, std::ios::trunc);
  csv << "id," << MetricsReport::csv_header() << "\n";

  std::vector<MetricsReport> reports;
  for (const std::string& id : ids) {
    DepthSample sample = crop(load_sample(dir, id), cfg.crop_mode);
    const Raster pred = predict_depth(net, sample.rgb);
    MetricsReport r = compute_metrics(make_pair(pred, sample, cfg));
    csv << id << "," << r.to_csv_row() << "\n";
    reports.push_back(r);
  }
  const MetricsReport mean = mean_report(reports);
  csv << "mean," << mean.to_csv_row() << "\n";
  out << "images=" << reports.size() << " " << mean.to_kv_line() << "\n";
  out << "wrote " << csv_path << "\n";
  return kExitOk;
}

int cmd_predict(const RunConfig& cfg, const std::string& checkpoint_path,
                const std::string& input_path, const std::string& output_path,
                std::ostream& out) {
  cfg.validate();
  print_header(cfg, out);

  DepthNet net(cfg.model, cfg.seed);
  load_checkpoint(checkpoint_path, net.params());
  const Raster rgb = load_raster(input_path);
  if (rgb.channels != 3) {
    throw ConfigError("predict: input raster must have 3 channels, got " +
                      std::to_string(rgb.channels));
  }
  const Raster depth = predict_depth(net, rgb);
  save_raster(output_path, depth);
  out << "wrote " << output_path << " (" << depth.width << "x" << depth.height << ")\n";
  return kExitOk;
}

int cmd_gradcheck(const std::string& scope, std::ostream& out) {
  const std::vector<GradCheckRow> rows = run_gradcheck(default_gradcheck_suite(), scope);
  if (rows.empty()) {
    throw ConfigError("gradcheck: no checks match scope '" + scope + "'");
  }
  bool all_pass = true;
  out << std::left << std::setw(34) << "check" << std::setw(22) << "shapes"
      << std::setw(14) << "max_rel_err" << "status\n";
  for (const GradCheckRow& r : rows) {
    out << std::left << std::setw(34) << r.name << std::setw(22) << r.shape_desc
        << std::setw(14) << std::setprecision(3) << std::scientific << r.max_rel_err
        << (r.pass ? "PASS" : "FAIL") << "\n";
    out.unsetf(std::ios::scientific);
    all_pass = all_pass && r.pass;
  }
  out << (all_pass ? "all checks passed" : "some checks FAILED") << "\n";
  return all_pass ? kExitOk : kExitCheckFailure;
}

int cmd_synth(const RunConfig& cfg, int train_count, int val_count, std::ostream& out) {
  cfg.validate();
  if (train_count < 1 || val_count < 0) {
    throw ConfigError("synth: counts must be positive");
  }
  const std::string train_dir = (fs::path(cfg.data_root) / "train").string();
  generate_dataset(train_dir, train_count, cfg.seed, cfg.model.input_w, cfg.model.input_h,
                   cfg.model.max_depth);
  out << "wrote " << train_count << " samples to " << train_dir << "\n";
  if (val_count > 0) {
    const std::string val_dir = (fs::path(cfg.data_root) / "val").string();
    generate_dataset(val_dir, val_count, cfg.seed + 0x76616cull, cfg.model.input_w,
                     cfg.model.input_h, cfg.model.max_depth);
    out << "wrote " << val_count << " samples to " << val_dir << "\n";
  }
  return kExitOk;
}

}  // namespace edgedepth

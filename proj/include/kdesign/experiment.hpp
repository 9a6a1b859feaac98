#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "kdesign/config.hpp"
#include "kdesign/dataset_io.hpp"
#include "kdesign/design.hpp"
#include "kdesign/errors.hpp"
#include "kdesign/metrics.hpp"

namespace kdesign {

// ---------------------------------------------------------------------------
// Atomic text output
// ---------------------------------------------------------------------------

namespace detail {

inline void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + target.parent_path().string());
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Design records: the structured text a design run leaves behind
// ---------------------------------------------------------------------------

inline constexpr const char* kDesignRecordHeader = "kdesign-design-record";
inline constexpr int kDesignRecordVersion = 1;

struct DesignRecord {
  std::uint64_t dataset_hash = 0;
  ReconMethod method = ReconMethod::ZeroFilled;
  DesignMode mode = DesignMode::Uniform;
  double snr = 0.0;
  double sigma = 0.0;
  int n0 = 0;
  int w0 = 0;
  std::uint64_t seed = 0;
  bool select_on_validation = false;
  DesignResult result;
};

/// Cell identifier used in file names: method, mode, and SNR.
inline std::string cell_name(ReconMethod method, DesignMode mode, double snr) {
  return std::string(recon_method_name(method)) + "_" + design_mode_name(mode) + "_snr" +
         detail::format_double(snr);
}

inline std::string serialize_design_record(const DesignRecord& r) {
  using detail::format_double;
  std::string out;
  out += std::string(kDesignRecordHeader) + " v" + std::to_string(kDesignRecordVersion) + "\n";
  out += "dataset_hash = " + detail::hex64(r.dataset_hash) + "\n";
  out += std::string("method = ") + recon_method_name(r.method) + "\n";
  out += std::string("mode = ") + design_mode_name(r.mode) + "\n";
  out += "snr = " + format_double(r.snr) + "\n";
  out += "sigma = " + format_double(r.sigma) + "\n";
  out += "n0 = " + std::to_string(r.n0) + "\n";
  out += "w0 = " + std::to_string(r.w0) + "\n";
  out += "seed = " + std::to_string(r.seed) + "\n";
  out += std::string("select_on_validation = ") + (r.select_on_validation ? "true" : "false") +
         "\n";
  out += "n_hat = " + std::to_string(r.result.n_hat) + "\n";
  out += "lambda = " + format_double(r.result.params.lambda) + "\n";
  if (r.result.params.method == ReconMethod::Apodized) {
    out += "window =";
    for (double h : r.result.params.window) out += " " + format_double(h);
    out += "\n";
  }
  out += "pattern =";
  for (double w : r.result.pattern.effective()) out += " " + format_double(w);
  out += "\n";
  out += "counts =";
  for (std::int64_t q : r.result.counts.counts()) out += " " + std::to_string(q);
  out += "\n";
  for (const CandidateReport& row : r.result.table) {
    out += "row = " + std::to_string(row.n) + " " + format_double(row.inner_loss) + " " +
           format_double(row.outer_loss) + " " + format_double(row.outer_nrmse) + " " +
           format_double(row.outer_ssim) + " " + (row.diverged ? "1" : "0") + " " +
           format_double(row.max_budget_violation) + "\n";
    out += "curve = " + std::to_string(row.n);
    for (double l : row.epoch_losses) out += " " + format_double(l);
    out += "\n";
  }
  return out;
}

inline DesignRecord parse_design_record(const std::string& text) {
  std::stringstream stream(text);
  std::string line;
  if (!std::getline(stream, line)) throw CorruptHeader("design record: empty file");
  {
    std::stringstream hs(line);
    std::string name, version;
    hs >> name >> version;
    if (name != kDesignRecordHeader) throw CorruptHeader("design record: bad header: " + line);
    if (version != "v" + std::to_string(kDesignRecordVersion)) {
      throw VersionMismatch("design record: unsupported " + version);
    }
  }

  std::uint64_t hash = 0;
  std::optional<ReconMethod> method;
  std::optional<DesignMode> mode;
  double snr = 0.0, sigma = -1.0, lambda = 0.0;
  int n0 = 0, w0 = 0, n_hat = 0;
  std::uint64_t seed = 0;
  bool select_on_validation = false;
  std::vector<double> window, pattern;
  std::vector<std::int64_t> counts;
  std::vector<CandidateReport> table;

  auto parse_doubles = [](std::stringstream& ss) {
    std::vector<double> v;
    double x;
    while (ss >> x) v.push_back(x);
    return v;
  };

  while (std::getline(stream, line)) {
    if (detail::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("design record: expected key = value: " + line);
    const std::string key = detail::trim(line.substr(0, eq));
    std::stringstream value(line.substr(eq + 1));
    if (key == "dataset_hash") {
      std::string hex;
      value >> hex;
      hash = std::stoull(hex, nullptr, 16);
    } else if (key == "method") {
      std::string name;
      value >> name;
      method = recon_method_from_name(name);
    } else if (key == "mode") {
      std::string name;
      value >> name;
      mode = design_mode_from_name(name);
    } else if (key == "snr") value >> snr;
    else if (key == "sigma") value >> sigma;
    else if (key == "n0") value >> n0;
    else if (key == "w0") value >> w0;
    else if (key == "seed") value >> seed;
    else if (key == "select_on_validation") {
      std::string b;
      value >> b;
      select_on_validation = b == "true";
    } else if (key == "n_hat") value >> n_hat;
    else if (key == "lambda") value >> lambda;
    else if (key == "window") window = parse_doubles(value);
    else if (key == "pattern") pattern = parse_doubles(value);
    else if (key == "counts") {
      std::int64_t q;
      while (value >> q) counts.push_back(q);
    } else if (key == "row") {
      CandidateReport row;
      int diverged = 0;
      if (!(value >> row.n >> row.inner_loss >> row.outer_loss >> row.outer_nrmse >>
            row.outer_ssim >> diverged >> row.max_budget_violation)) {
        throw TruncatedPayload("design record: short row: " + line);
      }
      row.diverged = diverged != 0;
      table.push_back(row);
    } else if (key == "curve") {
      int n = 0;
      value >> n;
      const std::vector<double> losses = parse_doubles(value);
      bool attached = false;
      for (CandidateReport& row : table) {
        if (row.n == n) {
          row.epoch_losses = losses;
          attached = true;
          break;
        }
      }
      if (!attached) throw IoError("design record: curve without a row: " + line);
    } else {
      throw IoError("design record: unknown key " + key);
    }
  }

  if (!method || !mode || sigma < 0.0 || n0 <= 0 || w0 <= 0 || n_hat <= 0 ||
      pattern.empty() || counts.empty()) {
    throw TruncatedPayload("design record: missing required fields");
  }

  DesignRecord r{hash,
                 *method,
                 *mode,
                 snr,
                 sigma,
                 n0,
                 w0,
                 seed,
                 select_on_validation,
                 DesignResult{n_hat,
                              *method == ReconMethod::Apodized ? ReconParams::apodized(window)
                              : *method == ReconMethod::SenseTV ? ReconParams::sense_tv(lambda)
                                                                : ReconParams::zero_filled(),
                              AveragingPattern(n_hat, std::move(pattern),
                                               AcquisitionBudget(n0, w0, sigma)),
                              IntegerAveragingPattern(n_hat, std::move(counts),
                                                      AcquisitionBudget(n0, w0, sigma)),
                              std::move(table)}};
  return r;
}

// ---------------------------------------------------------------------------
// Image dumps: 16-bit binary PGM, magnitude normalized to the image maximum
// ---------------------------------------------------------------------------

inline std::string encode_pgm16(const Image& image) {
  double max_mag = 0.0;
  for (const cxd& v : image.pixels) max_mag = std::max(max_mag, std::abs(v));
  std::string out = "P5\n" + std::to_string(image.n) + " " + std::to_string(image.n) +
                    "\n65535\n";
  out.reserve(out.size() + image.pixels.size() * 2);
  for (const cxd& v : image.pixels) {
    const double scaled = max_mag > 0.0 ? std::abs(v) / max_mag : 0.0;
    const auto word = static_cast<std::uint16_t>(std::lround(scaled * 65535.0));
    out.push_back(static_cast<char>(word >> 8));  // big-endian per the format
    out.push_back(static_cast<char>(word & 0xff));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct GenerateSummary {
  std::string path;
  std::uint64_t hash = 0;
  int slices = 0;
};

/// Build the synthetic dataset described by [dataset] and write it (plus
/// its split manifest) to the configured path.
inline GenerateSummary cmd_generate(const ExperimentConfig& cfg, std::ostream& log) {
  const Dataset ds = generate_dataset(cfg.n0, cfg.coils, cfg.train_slices,
                                      cfg.validation_slices, cfg.test_slices, cfg.complexity,
                                      cfg.dataset_seed);
  namespace fs = std::filesystem;
  const fs::path target(cfg.dataset_path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + target.parent_path().string());
  }
  save_dataset(ds, cfg.dataset_path);
  const std::uint64_t hash = dataset_hash(ds);
  log << "dataset: " << cfg.dataset_path << "\n"
      << "  gridsize " << ds.n0 << ", " << ds.maps.coils << " coils, " << ds.size()
      << " slices (" << cfg.train_slices << " train / " << cfg.validation_slices
      << " validation / " << cfg.test_slices << " test)\n"
      << "  hash " << detail::hex64(hash) << "\n";
  for (double snr : cfg.sweep_snr) {
    const double sigma =
        calibrate_sigma(ds, AcquisitionBudget(cfg.n0, cfg.w0, 0.0), snr, cfg.mask_radius);
    log << "  sigma(snr=" << detail::format_double(snr) << ") = " << detail::format_double(sigma)
        << "\n";
  }
  return GenerateSummary{cfg.dataset_path, hash, static_cast<int>(ds.size())};
}

/// Run one design cell: calibrate sigma for the requested SNR, optimize, and
/// return the record (no files written).
inline DesignRecord run_design_cell(const ExperimentConfig& cfg, const Dataset& ds,
                                    ReconMethod method, DesignMode mode, double snr) {
  const double sigma =
      calibrate_sigma(ds, AcquisitionBudget(cfg.n0, cfg.w0, 0.0), snr, cfg.mask_radius);
  const AcquisitionBudget budget(cfg.n0, cfg.w0, sigma);
  const std::uint64_t hash = dataset_hash(ds);

  if (method == ReconMethod::ZeroFilled) {
    // Baseline: full grid, uniform averaging, no trainable parameters.
    DesignProblem problem{budget,         {cfg.n0}, method, DesignMode::Uniform,
                          Hyperparameters{}, cfg.admm, cfg.select_on_validation};
    const AveragingPattern pattern = uniform_pattern(cfg.n0, budget);
    IntegerAveragingPattern counts = round_pattern(pattern, budget);
    const ReconParams params = ReconParams::zero_filled();
    const OuterMetrics outer =
        evaluate_outer(problem, ds, cfg.design_seed, cfg.n0, params, counts);
    CandidateReport row;
    row.n = cfg.n0;
    row.inner_loss = outer.loss;
    row.outer_loss = outer.loss;
    row.outer_nrmse = outer.nrmse;
    row.outer_ssim = outer.ssim;
    return DesignRecord{hash,   method,   mode,           snr,
                        sigma,  cfg.n0,   cfg.w0,         cfg.design_seed,
                        cfg.select_on_validation,
                        DesignResult{cfg.n0, params, pattern, std::move(counts), {row}}};
  }

  DesignProblem problem{budget,
                        cfg.candidates,
                        method,
                        mode,
                        cfg.hyperparameters_for(method, mode),
                        cfg.admm,
                        cfg.select_on_validation};
  return DesignRecord{hash,   method,   mode,           snr,
                      sigma,  cfg.n0,   cfg.w0,         cfg.design_seed,
                      cfg.select_on_validation,
                      grid_search(problem, ds, cfg.design_seed)};
}

/// The candidate table as CSV. resolution_pct is n/n0; one_minus_nrmse is
/// the score the search maximizes, written so bigger is better.
inline std::string design_table_csv(const DesignRecord& r) {
  std::string out =
      "n,resolution_pct,inner_loss,outer_loss,one_minus_nrmse,ssim,diverged,"
      "max_budget_violation\n";
  for (const CandidateReport& row : r.result.table) {
    out += std::to_string(row.n) + "," +
           detail::format_double(100.0 * row.n / r.n0) + "," +
           detail::format_double(row.inner_loss) + "," +
           detail::format_double(row.outer_loss) + "," +
           detail::format_double(1.0 - row.outer_nrmse) + "," +
           detail::format_double(row.outer_ssim) + "," + (row.diverged ? "1" : "0") + "," +
           detail::format_double(row.max_budget_violation) + "\n";
  }
  return out;
}

inline std::string design_curves_csv(const DesignRecord& r) {
  std::string out = "n,epoch,loss\n";
  for (const CandidateReport& row : r.result.table) {
    for (std::size_t e = 0; e < row.epoch_losses.size(); ++e) {
      out += std::to_string(row.n) + "," + std::to_string(e) + "," +
             detail::format_double(row.epoch_losses[e]) + "\n";
    }
  }
  return out;
}

inline std::string design_record_path(const std::string& dir, const DesignRecord& r) {
  return dir + "/design_" + cell_name(r.method, r.mode, r.snr) + ".txt";
}

/// Design command: load the dataset, run the configured cell, write the
/// record plus table/curve CSVs into the output directory.
inline DesignRecord cmd_design(const ExperimentConfig& cfg, std::ostream& log) {
  const Dataset ds = load_dataset(cfg.dataset_path);
  const DesignRecord record = run_design_cell(cfg, ds, cfg.method, cfg.mode, cfg.snr);
  const std::string base = cfg.output_dir + "/design_" +
                           cell_name(record.method, record.mode, record.snr);
  detail::write_file_atomic(base + ".txt", serialize_design_record(record));
  detail::write_file_atomic(base + "_table.csv", design_table_csv(record));
  detail::write_file_atomic(base + "_curves.csv", design_curves_csv(record));
  log << "design " << cell_name(record.method, record.mode, record.snr) << ": n_hat = "
      << record.result.n_hat << " (sigma " << detail::format_double(record.sigma) << ")\n";
  for (const CandidateReport& row : record.result.table) {
    log << "  n=" << row.n << " outer_loss=" << detail::format_double(row.outer_loss)
        << (row.diverged ? " (diverged)" : "") << (row.n == record.result.n_hat ? "  <-- n_hat" : "")
        << "\n";
  }
  return record;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvaluationRow {
  std::size_t slice = 0;
  int draw = 0;
  double nrmse = 0.0;
  double ssim = 0.0;
};

struct EvaluationSummary {
  std::vector<EvaluationRow> rows;
  MetricReport report;
};

/// Score a finished design on the test split: fresh noise draws, integer
/// averaging pattern, trained parameters, metrics against the full-grid
/// references.
inline EvaluationSummary run_evaluation(const ExperimentConfig& cfg, const Dataset& ds,
                                        const DesignRecord& record,
                                        std::vector<std::pair<std::string, Image>>* images) {
  if (record.dataset_hash != dataset_hash(ds)) {
    throw IoError("dataset-mismatch",
                  "design record was made against dataset " + detail::hex64(record.dataset_hash) +
                      ", not " + detail::hex64(dataset_hash(ds)));
  }
  if (cfg.draws < 1) throw InvalidArgument("evaluate: draws must be >= 1");
  const auto test_ids = ds.indices(Split::Test);
  if (test_ids.empty()) throw DegenerateInput("evaluate: empty test split");

  const int n = record.result.n_hat;
  const EncodingModel model(ds.maps, n);
  const AcquisitionBudget budget(record.n0, record.w0, record.sigma);
  const std::vector<double> w = effective_weights(record.result.counts, budget);

  EvaluationSummary summary;
  for (std::size_t t : test_ids) {
    const Image ref = reference_image(ds.slices[t], ds.maps, ds.n0).image;
    if (images) {
      images->emplace_back("reference_s" + std::to_string(t) + ".pgm", ref);
    }
    const MultiCoilKSpace clean = crop_kspace(ds.slices[t], n);
    for (int j = 0; j < cfg.draws; ++j) {
      TrainSlice slice{clean, ref,
                       draw_unit_noise(ds.maps.coils, n, rng::derive(cfg.evaluate_seed, t, j))};
      const MultiCoilKSpace d = noisy_data(slice, w, record.sigma);
      Image x(ds.n0);
      switch (record.method) {
        case ReconMethod::ZeroFilled: x = zero_filled_recon(d, model); break;
        case ReconMethod::Apodized: x = apodized_recon(d, record.result.params, model); break;
        case ReconMethod::SenseTV:
          x = sense_tv_recon(d, w, record.result.params, model, cfg.admm);
          break;
      }
      EvaluationRow row{t, j, nrmse(x.pixels, ref.pixels), ssim(x, ref)};
      summary.rows.push_back(row);
      summary.report.add(row.nrmse, row.ssim);
      if (images) {
        images->emplace_back(
            "recon_s" + std::to_string(t) + "_d" + std::to_string(j) + ".pgm", x);
      }
    }
  }
  return summary;
}

inline std::string evaluation_csv(const EvaluationSummary& summary) {
  std::string out = "slice,draw,nrmse,ssim\n";
  for (const EvaluationRow& row : summary.rows) {
    out += std::to_string(row.slice) + "," + std::to_string(row.draw) + "," +
           detail::format_double(row.nrmse) + "," + detail::format_double(row.ssim) + "\n";
  }
  return out;
}

/// Evaluate command: read the design record for the configured cell, verify
/// it matches the dataset, score the test split, and write the CSV (and
/// optional image dumps).
inline EvaluationSummary cmd_evaluate(const ExperimentConfig& cfg, std::ostream& log) {
  const Dataset ds = load_dataset(cfg.dataset_path);
  const std::string cell = cell_name(cfg.method, cfg.mode, cfg.snr);
  const DesignRecord record =
      parse_design_record(detail::read_file(cfg.output_dir + "/design_" + cell + ".txt"));

  std::vector<std::pair<std::string, Image>> images;
  const EvaluationSummary summary =
      run_evaluation(cfg, ds, record, cfg.save_images ? &images : nullptr);
  detail::write_file_atomic(cfg.output_dir + "/eval_" + cell + ".csv",
                            evaluation_csv(summary));
  for (const auto& [name, image] : images) {
    detail::write_file_atomic(cfg.output_dir + "/images/" + cell + "/" + name,
                              encode_pgm16(image));
  }
  log << "evaluate " << cell << ": nrmse " << detail::format_double(summary.report.nrmse_mean())
      << " +/- " << detail::format_double(summary.report.nrmse_std()) << ", ssim "
      << detail::format_double(summary.report.ssim_mean()) << " +/- "
      << detail::format_double(summary.report.ssim_std()) << " over " << summary.rows.size()
      << " reconstructions\n";
  return summary;
}

// ---------------------------------------------------------------------------
// Sweep: every (snr, method, mode) cell, resumable, one summary CSV
// ---------------------------------------------------------------------------

struct SweepCell {
  ReconMethod method = ReconMethod::ZeroFilled;
  DesignMode mode = DesignMode::Uniform;
  double snr = 0.0;
};

/// Cells in deterministic order: for each SNR, the zero-filled baseline
/// first, then method x mode from the config lists.
inline std::vector<SweepCell> sweep_cells(const ExperimentConfig& cfg) {
  std::vector<SweepCell> cells;
  for (double snr : cfg.sweep_snr) {
    cells.push_back(SweepCell{ReconMethod::ZeroFilled, DesignMode::Uniform, snr});
    for (const std::string& method_name : cfg.sweep_methods) {
      const ReconMethod method = recon_method_from_name(method_name);
      if (method == ReconMethod::ZeroFilled) continue;  // baseline already added
      for (const std::string& mode_name : cfg.sweep_modes) {
        cells.push_back(SweepCell{method, design_mode_from_name(mode_name), snr});
      }
    }
  }
  return cells;
}

struct SweepSummaryRow {
  SweepCell cell;
  int n_hat = 0;
  double nrmse_mean = 0.0, nrmse_std = 0.0;
  double ssim_mean = 0.0, ssim_std = 0.0;
};

inline std::string sweep_summary_csv(const std::vector<SweepSummaryRow>& rows) {
  std::string out = "snr,method,mode,n_hat,nrmse_mean,nrmse_std,ssim_mean,ssim_std\n";
  for (const SweepSummaryRow& r : rows) {
    out += detail::format_double(r.cell.snr) + std::string(",") +
           recon_method_name(r.cell.method) + "," + design_mode_name(r.cell.mode) + "," +
           std::to_string(r.n_hat) + "," + detail::format_double(r.nrmse_mean) + "," +
           detail::format_double(r.nrmse_std) + "," + detail::format_double(r.ssim_mean) + "," +
           detail::format_double(r.ssim_std) + "\n";
  }
  return out;
}

/// Sweep command: make sure the dataset exists (generating it if missing),
/// run design + evaluation for every cell, and write summary.csv. Finished
/// cells are recorded in sweep_state.txt and skipped on rerun; the summary
/// is always rebuilt from the cell outputs.
inline std::vector<SweepSummaryRow> cmd_sweep(const ExperimentConfig& cfg, std::ostream& log) {
  namespace fs = std::filesystem;
  if (!fs::exists(cfg.dataset_path)) {
    cmd_generate(cfg, log);
  }
  const Dataset ds = load_dataset(cfg.dataset_path);

  const std::string state_path = cfg.output_dir + "/sweep_state.txt";
  std::vector<std::string> done;
  if (fs::exists(state_path)) {
    std::stringstream ss(detail::read_file(state_path));
    std::string cell, status;
    while (ss >> cell >> status) {
      if (status == "done") done.push_back(cell);
    }
  }
  auto is_done = [&](const std::string& cell) {
    return std::find(done.begin(), done.end(), cell) != done.end() &&
           fs::exists(cfg.output_dir + "/design_" + cell + ".txt") &&
           fs::exists(cfg.output_dir + "/eval_" + cell + ".csv");
  };
  auto mark_done = [&](const std::string& cell) {
    done.push_back(cell);
    std::string state;
    for (const std::string& c : done) state += c + " done\n";
    detail::write_file_atomic(state_path, state);
  };

  std::vector<SweepSummaryRow> rows;
  for (const SweepCell& cell : sweep_cells(cfg)) {
    const std::string name = cell_name(cell.method, cell.mode, cell.snr);
    if (is_done(name)) {
      log << "sweep: " << name << " already done, skipping\n";
    } else {
      log << "sweep: running " << name << "\n";
      const DesignRecord record = run_design_cell(cfg, ds, cell.method, cell.mode, cell.snr);
      const std::string base = cfg.output_dir + "/design_" + name;
      detail::write_file_atomic(base + ".txt", serialize_design_record(record));
      detail::write_file_atomic(base + "_table.csv", design_table_csv(record));
      detail::write_file_atomic(base + "_curves.csv", design_curves_csv(record));

      std::vector<std::pair<std::string, Image>> images;
      const EvaluationSummary summary =
          run_evaluation(cfg, ds, record, cfg.save_images ? &images : nullptr);
      detail::write_file_atomic(cfg.output_dir + "/eval_" + name + ".csv",
                                evaluation_csv(summary));
      for (const auto& [img_name, image] : images) {
        detail::write_file_atomic(cfg.output_dir + "/images/" + name + "/" + img_name,
                                  encode_pgm16(image));
      }
      mark_done(name);
    }

    // Summary row from the files, so resumed and fresh runs agree exactly.
    const DesignRecord record = parse_design_record(
        detail::read_file(cfg.output_dir + "/design_" + name + ".txt"));
    MetricReport report;
    {
      std::stringstream ss(detail::read_file(cfg.output_dir + "/eval_" + name + ".csv"));
      std::string line;
      std::getline(ss, line);  // header
      while (std::getline(ss, line)) {
        if (detail::trim(line).empty()) continue;
        std::stringstream row(line);
        std::string slice, draw, nrmse_s, ssim_s;
        if (!std::getline(row, slice, ',') || !std::getline(row, draw, ',') ||
            !std::getline(row, nrmse_s, ',') || !std::getline(row, ssim_s)) {
          throw IoError("malformed evaluation row: " + line);
        }
        report.add(std::stod(nrmse_s), std::stod(ssim_s));
      }
    }
    rows.push_back(SweepSummaryRow{cell, record.result.n_hat, report.nrmse_mean(),
                                   report.nrmse_std(), report.ssim_mean(),
                                   report.ssim_std()});
  }

  detail::write_file_atomic(cfg.output_dir + "/summary.csv", sweep_summary_csv(rows));
  log << "sweep: wrote " << cfg.output_dir << "/summary.csv (" << rows.size() << " cells)\n";
  return rows;
}

}  // namespace kdesign

// mcdu: cluster Monte-Carlo dropout detection samples and report their
// uncertainty. Subcommands: synth, cluster, report, calibrate, eval.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "figures.hpp"
#include "mcdu/mcdu.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Options {
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::string out_dir = ".";
  std::string algorithm = "bgm";
  int split_threshold = 150;
  double background_threshold = 0.45;
  double mask_threshold = 0.5;
  int bins = 10;
};

// FNV-1a; keys per-image seeds on the image id so that file order does not
// matter.
std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw mcdu::DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write-temp-then-rename so readers never see a partial file.
void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out.flush()) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

// Image ids become directory and file names.
void check_image_id(const std::string& id) {
  if (id.empty() || id == "." || id == ".." || id.find_first_of("/\\") != std::string::npos) {
    throw mcdu::DataError("image_id '" + id + "' cannot be used as a file name");
  }
}

std::string num(double v) { return nlohmann::json(v).dump(); }

void write_manifest(const Options& o, const std::string& command, const std::vector<std::string>& inputs,
                    const Json& extra = Json::object()) {
  Json m;
  m["tool"] = "mcdu";
  m["version"] = kVersion;
  m["command"] = command;
  m["inputs"] = inputs;
  Json cfg;
  cfg["seed"] = o.seed;
  cfg["jobs"] = o.jobs;
  cfg["algorithm"] = o.algorithm;
  cfg["split_threshold"] = o.split_threshold;
  cfg["background_threshold"] = o.background_threshold;
  cfg["mask_threshold"] = o.mask_threshold;
  cfg["bins"] = o.bins;
  for (const auto& [k, v] : extra.items()) cfg[k] = v;
  m["config"] = std::move(cfg);
  m["out_dir"] = o.out_dir;
  write_atomic(fs::path(o.out_dir) / "manifest.json", m.dump(2) + "\n");
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first failure by
// index is rethrown after all work stops.
template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned threads = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, jobs), n));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

mcdu::SampleSet load_samples(const std::string& path) {
  std::istringstream in(read_file(path));
  try {
    auto s = mcdu::parse_sample_set(in);
    check_image_id(s.image_id);
    return s;
  } catch (const mcdu::ParseError& e) {
    throw mcdu::DataError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------- synth

mcdu::BBox json_box(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw mcdu::DataError("true_box must be [x1, y1, x2, y2]");
  return mcdu::BBox(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

void reject_unknown(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw mcdu::DataError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      throw mcdu::DataError(where + ": unknown field '" + k + "'");
    }
  }
}

mcdu::SceneSpec scene_from_json(const Json& j, std::size_t index) {
  reject_unknown(j, {"image_id", "height", "width", "num_classes", "n_repetitions", "instances"}, "scene");
  mcdu::SceneSpec s;
  s.image_id = j.value("image_id", "scene_" + std::to_string(index));
  check_image_id(s.image_id);
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.num_classes = j.value("num_classes", s.num_classes);
  s.n_repetitions = j.value("n_repetitions", s.n_repetitions);
  for (const auto& ij : j.at("instances")) {
    reject_unknown(ij,
                   {"true_box", "true_class", "mask_shape", "box_jitter_sigma", "class_confusion", "mask_noise",
                    "miss_rate", "mask_presence"},
                   "instance");
    mcdu::InstanceSpec in;
    in.true_box = json_box(ij.at("true_box"));
    in.true_class = ij.value("true_class", in.true_class);
    const auto shape = ij.value("mask_shape", std::string("ellipse"));
    if (shape == "ellipse") {
      in.mask_shape = mcdu::MaskShape::Ellipse;
    } else if (shape == "box") {
      in.mask_shape = mcdu::MaskShape::Box;
    } else {
      throw mcdu::DataError("mask_shape must be \"ellipse\" or \"box\"");
    }
    in.box_jitter_sigma = ij.value("box_jitter_sigma", in.box_jitter_sigma);
    in.class_confusion = ij.value("class_confusion", in.class_confusion);
    in.mask_noise = ij.value("mask_noise", in.mask_noise);
    in.miss_rate = ij.value("miss_rate", in.miss_rate);
    in.mask_presence = ij.value("mask_presence", in.mask_presence);
    s.instances.push_back(in);
  }
  s.validate();
  return s;
}

int cmd_synth(const Options& o, const std::string& spec_path) {
  write_manifest(o, "synth", {spec_path});
  Json spec;
  try {
    spec = Json::parse(read_file(spec_path));
    reject_unknown(spec, {"scenes", "calibration"}, "synth spec");
  } catch (const Json::exception& e) {
    throw mcdu::DataError(spec_path + ": " + e.what());
  }

  std::vector<mcdu::SceneSpec> scenes;
  try {
    if (spec.contains("scenes")) {
      for (std::size_t i = 0; i < spec["scenes"].size(); ++i) {
        auto s = scene_from_json(spec["scenes"][i], i);
        s.seed = mcdu::derive_seed(o.seed, i);
        scenes.push_back(std::move(s));
      }
    }
  } catch (const Json::exception& e) {
    throw mcdu::DataError(spec_path + ": " + e.what());
  }
  std::set<std::string> ids;
  for (const auto& s : scenes) {
    if (!ids.insert(s.image_id).second) throw mcdu::DataError("duplicate image_id '" + s.image_id + "'");
  }

  const fs::path out(o.out_dir);
  parallel_for(scenes.size(), o.jobs, [&](std::size_t i) {
    const auto scene = mcdu::generate(scenes[i]);
    std::ostringstream samples, gt, labels;
    mcdu::write_sample_set(samples, scene.samples);
    mcdu::write_ground_truth(gt, scene.ground_truth);
    labels << "detection_index,instance\n";
    for (std::size_t d = 0; d < scene.true_labels.size(); ++d) labels << d << ',' << scene.true_labels[d] << '\n';
    const auto& id = scenes[i].image_id;
    write_atomic(out / (id + ".samples.jsonl"), samples.str());
    write_atomic(out / (id + ".gt.jsonl"), gt.str());
    write_atomic(out / (id + ".labels.csv"), labels.str());
  });
  for (const auto& s : scenes) {
    std::cout << s.image_id << ": " << s.instances.size() << " instances x " << s.n_repetitions << " repetitions\n";
  }

  if (spec.contains("calibration")) {
    const auto& c = spec["calibration"];
    try {
      reject_unknown(c, {"n", "temperature", "num_classes"}, "calibration");
      const auto n = c.value("n", 10000);
      const double t = c.value("temperature", 1.0);
      const int k = c.value("num_classes", 5);
      if (n < 1 || !(t > 0.0) || k < 1) throw mcdu::DataError("calibration: need n >= 1, temperature > 0, num_classes >= 1");
      const auto records = mcdu::generate_calibration_records(static_cast<std::size_t>(n), t, k,
                                                              mcdu::derive_seed(o.seed, 0xCA11B000ULL));
      std::ostringstream rec;
      mcdu::write_calibration_records(rec, records);
      write_atomic(out / "calibration.jsonl", rec.str());
      std::cout << "calibration: " << n << " records, temperature " << t << "\n";
    } catch (const Json::exception& e) {
      throw mcdu::DataError(spec_path + ": " + e.what());
    }
  }
  return 0;
}

// ---------------------------------------------------------------- cluster

mcdu::ClusterConfig cluster_config(const Options& o) {
  mcdu::ClusterConfig cfg;
  cfg.algorithm = o.algorithm == "agg" ? mcdu::ClusterAlgorithm::Agg : mcdu::ClusterAlgorithm::Bgm;
  cfg.split_threshold = o.split_threshold;
  cfg.seed = o.seed;
  return cfg;
}

struct ClusterFile {
  std::string image_id;
  std::size_t n_detections = 0;
  std::vector<mcdu::InstanceCluster> clusters;  // only ids, flags and indices are filled
};

// Clusters file: a header {"image_id", "n_detections", "algorithm",
// "background_threshold", "seed"} then one {"cluster_id", "size",
// "refused_split", "detection_indices"} per cluster. Indices refer to the
// parsed sample file (detections in repetition order).
std::string clusters_jsonl(const mcdu::SampleSet& s, const Options& o, std::uint64_t seed,
                           const std::vector<mcdu::InstanceCluster>& clusters) {
  std::ostringstream out;
  Json h;
  h["image_id"] = s.image_id;
  h["n_detections"] = s.detections.size();
  h["algorithm"] = o.algorithm;
  h["background_threshold"] = o.background_threshold;
  h["seed"] = seed;
  mcdu::jsonl::write_record(out, h);
  for (const auto& c : clusters) {
    Json r;
    r["cluster_id"] = c.cluster_id;
    r["size"] = c.size();
    r["refused_split"] = c.refused_split;
    r["detection_indices"] = c.detection_indices;
    mcdu::jsonl::write_record(out, r);
  }
  return out.str();
}

ClusterFile parse_clusters(const std::string& path) {
  std::istringstream in(read_file(path));
  namespace jl = mcdu::jsonl;
  try {
    const auto lines = jl::read_records(in);
    if (lines.empty()) throw mcdu::ParseError(1, "missing header record");
    const auto& h = lines.front();
    jl::expect_fields(h, {"image_id", "n_detections", "algorithm", "background_threshold", "seed"});
    ClusterFile f;
    f.image_id = jl::get_string(h, jl::field(h, "image_id"), "image_id");
    const auto n = jl::get_int(h, jl::field(h, "n_detections"), "n_detections");
    if (n < 0) throw mcdu::ParseError(h.number, "n_detections must be non-negative");
    f.n_detections = static_cast<std::size_t>(n);
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto& l = lines[i];
      jl::expect_fields(l, {"cluster_id", "size", "refused_split", "detection_indices"});
      mcdu::InstanceCluster c;
      c.cluster_id = static_cast<int>(jl::get_int(l, jl::field(l, "cluster_id"), "cluster_id"));
      if (!jl::field(l, "refused_split").is_boolean()) throw mcdu::ParseError(l.number, "refused_split must be a boolean");
      c.refused_split = jl::field(l, "refused_split").get<bool>();
      const auto& idx = jl::field(l, "detection_indices");
      if (!idx.is_array() || idx.empty()) throw mcdu::ParseError(l.number, "detection_indices must be a non-empty array");
      for (const auto& v : idx) {
        if (!v.is_number_unsigned()) throw mcdu::ParseError(l.number, "detection indices must be non-negative integers");
        c.detection_indices.push_back(v.get<std::size_t>());
      }
      if (jl::get_int(l, jl::field(l, "size"), "size") != static_cast<long long>(c.detection_indices.size())) {
        throw mcdu::ParseError(l.number, "size disagrees with detection_indices");
      }
      f.clusters.push_back(std::move(c));
    }
    return f;
  } catch (const mcdu::ParseError& e) {
    throw mcdu::DataError(path + ": " + e.what());
  }
}

int cmd_cluster(const Options& o, const std::vector<std::string>& files) {
  write_manifest(o, "cluster", files);
  const fs::path out(o.out_dir);
  std::vector<std::string> summaries(files.size());
  std::vector<std::string> warnings(files.size());
  std::vector<std::string> ids(files.size());
  parallel_for(files.size(), o.jobs, [&](std::size_t f) {
    const auto s = load_samples(files[f]);
    ids[f] = s.image_id;
    mcdu::IngestConfig ingest;
    ingest.background_threshold = o.background_threshold;
    const auto keep = mcdu::background_survivors(s, ingest);
    if (keep.empty()) throw mcdu::DataError(files[f] + ": nothing to cluster");
    mcdu::SampleSet filtered = s;
    filtered.detections.clear();
    for (auto i : keep) filtered.detections.push_back(s.detections[i]);

    auto cfg = cluster_config(o);
    cfg.seed = mcdu::derive_seed(o.seed, fnv1a64(s.image_id));
    auto clusters = mcdu::cluster_pipeline(filtered, cfg);
    for (auto& c : clusters) {
      for (auto& idx : c.detection_indices) idx = keep[idx];
    }

    std::vector<int> assignment(s.detections.size(), -1);
    for (const auto& c : clusters) {
      for (auto idx : c.detection_indices) assignment[idx] = c.cluster_id;
    }
    std::ostringstream csv;
    csv << "detection_index,cluster_id\n";
    for (std::size_t i = 0; i < assignment.size(); ++i) csv << i << ',' << assignment[i] << '\n';
    write_atomic(out / (s.image_id + ".clusters.jsonl"), clusters_jsonl(s, o, cfg.seed, clusters));
    write_atomic(out / (s.image_id + ".assignments.csv"), csv.str());

    std::string sizes;
    for (const auto& c : clusters) {
      sizes += (sizes.empty() ? "" : " ") + std::to_string(c.size());
      if (c.refused_split) {
        warnings[f] += fmt::format("warning: {} cluster {} has {} members but would not split\n", s.image_id,
                                   c.cluster_id, c.size());
      }
    }
    summaries[f] = fmt::format("{}: {} clusters from {} detections ({} filtered) sizes [{}]\n", s.image_id,
                               clusters.size(), s.detections.size(), s.detections.size() - keep.size(), sizes);
  });
  std::set<std::string> seen;
  for (std::size_t f = 0; f < files.size(); ++f) {
    if (!seen.insert(ids[f]).second) throw mcdu::DataError("duplicate image_id '" + ids[f] + "' across inputs");
    std::cout << summaries[f];
    std::cerr << warnings[f];
  }
  return 0;
}

// ---------------------------------------------------------------- report

// Rebuilds full clusters from a sample file and its clusters file.
std::vector<mcdu::InstanceCluster> join_clusters(const mcdu::SampleSet& s, const ClusterFile& f,
                                                 const std::string& where) {
  if (f.image_id != s.image_id) {
    throw mcdu::DataError(where + ": clusters are for '" + f.image_id + "', samples for '" + s.image_id + "'");
  }
  if (f.n_detections != s.detections.size()) {
    throw mcdu::DataError(where + ": clusters file expects " + std::to_string(f.n_detections) +
                          " detections, sample file has " + std::to_string(s.detections.size()));
  }
  const auto within = mcdu::within_repetition_indices(s);
  std::vector<bool> used(s.detections.size(), false);
  std::vector<mcdu::InstanceCluster> out = f.clusters;
  for (auto& c : out) {
    for (auto idx : c.detection_indices) {
      if (idx >= s.detections.size()) throw mcdu::DataError(where + ": detection index out of range");
      if (used[idx]) throw mcdu::DataError(where + ": detection " + std::to_string(idx) + " in two clusters");
      used[idx] = true;
      c.members.push_back(s.detections[idx]);
      c.source_labels.emplace_back(s.detections[idx].repetition, within[idx]);
    }
  }
  return out;
}

struct ImageInput {
  mcdu::SampleSet samples;
  std::vector<mcdu::InstanceCluster> clusters;
};

std::vector<ImageInput> load_pairs(const std::vector<std::string>& samples, const std::vector<std::string>& clusters,
                                   unsigned jobs) {
  if (samples.size() != clusters.size()) throw CLI::ValidationError("--samples and --clusters must pair up");
  std::vector<ImageInput> images(samples.size());
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    images[i].samples = load_samples(samples[i]);
    images[i].clusters = join_clusters(images[i].samples, parse_clusters(clusters[i]), clusters[i]);
  });
  std::set<std::string> seen;
  for (const auto& im : images) {
    if (!seen.insert(im.samples.image_id).second) {
      throw mcdu::DataError("duplicate image_id '" + im.samples.image_id + "' across inputs");
    }
  }
  return images;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

int cmd_report(const Options& o, const std::vector<std::string>& samples, const std::vector<std::string>& clusters) {
  std::vector<std::string> inputs = samples;
  inputs.insert(inputs.end(), clusters.begin(), clusters.end());
  write_manifest(o, "report", inputs);
  const auto images = load_pairs(samples, clusters, o.jobs);
  const fs::path out(o.out_dir);
  std::vector<std::string> lines(images.size());
  parallel_for(images.size(), o.jobs, [&](std::size_t i) {
    const auto& im = images[i];
    const fs::path dir = out / im.samples.image_id;
    std::ostringstream summary;
    summary << "cluster_id,size,refused_split,class_id,confidence,zero_mask,mean_box_iou,mean_mask_iou\n";
    std::size_t zero = 0;
    for (const auto& c : im.clusters) {
      const auto r = mcdu::build_report(c, o.mask_threshold);
      const auto det = mcdu::cluster_to_detection(r, im.samples.image_id);
      const fs::path cdir = dir / ("cluster_" + std::to_string(c.cluster_id));
      write_atomic(cdir / "report.json", mcdu::report_json(r).dump(1) + "\n");
      write_atomic(cdir / "box.svg", mcdu::figures::box_figure(r));
      write_atomic(cdir / "classes.svg", mcdu::figures::class_figure(r));
      write_atomic(cdir / "kde.svg", mcdu::figures::kde_figure(r));
      const auto& m = r.mask_stats;
      if (!m.zero_mask) {
        std::ostringstream mean_pgm, std_pgm;
        mcdu::write_pgm(mean_pgm, m.height, m.width, m.mean_mask, 1.0);
        mcdu::write_pgm(std_pgm, m.height, m.width, m.std_mask, 2.0);
        write_atomic(cdir / "mask_mean.pgm", mean_pgm.str());
        write_atomic(cdir / "mask_std.pgm", std_pgm.str());
        write_atomic(cdir / "mask_mean.svg",
                     mcdu::figures::heatmap_figure(m, m.mean_mask, 1.0, fmt::format("cluster {} mean mask", c.cluster_id)));
        write_atomic(cdir / "mask_std.svg",
                     mcdu::figures::heatmap_figure(m, m.std_mask, 2.0, fmt::format("cluster {} mask std", c.cluster_id)));
      } else {
        ++zero;
      }
      summary << c.cluster_id << ',' << r.size << ',' << (r.refused_split ? "true" : "false") << ',' << det.class_id
              << ',' << num(det.confidence) << ',' << (m.zero_mask ? "true" : "false") << ','
              << num(mean_of(r.box_iou_samples)) << ',' << num(mean_of(r.mask_iou_samples)) << '\n';
    }
    write_atomic(dir / "summary.csv", summary.str());
    lines[i] = fmt::format("{}: {} cluster reports ({} zero masks)\n", im.samples.image_id, im.clusters.size(), zero);
  });
  for (const auto& l : lines) std::cout << l;
  return 0;
}

// ---------------------------------------------------------------- calibrate

std::string reliability_csv(const mcdu::ReliabilityDiagram& d) {
  std::string s = "bin_lo,bin_hi,confidence,accuracy,count\n";
  for (const auto& b : d.bins) {
    s += num(b.lo) + ',' + num(b.hi) + ',' + num(b.confidence) + ',' + num(b.accuracy) + ',' + std::to_string(b.count) +
         '\n';
  }
  return s;
}

int cmd_calibrate(const Options& o, const std::string& path) {
  write_manifest(o, "calibrate", {path});
  std::istringstream in(read_file(path));
  std::vector<mcdu::CalibrationRecord> records;
  try {
    records = mcdu::parse_calibration_records(in);
  } catch (const mcdu::ParseError& e) {
    throw mcdu::DataError(path + ": " + e.what());
  }
  std::set<int> classes;
  for (const auto& r : records) classes.insert(r.true_class);
  if (records.empty()) throw mcdu::DataError(path + ": no records");
  if (classes.size() < 2) throw mcdu::DataError(path + ": need at least two distinct true classes");

  const double t = mcdu::fit_temperature(records);
  const auto before = mcdu::reliability(records, 1.0, o.bins);
  const auto after = mcdu::reliability(records, t, o.bins);
  Json j;
  j["records"] = records.size();
  j["temperature"] = t;
  j["nll_before"] = mcdu::negative_log_likelihood(records, 1.0);
  j["nll_after"] = mcdu::negative_log_likelihood(records, t);
  j["mce_before"] = mcdu::mce(before);
  j["ace_before"] = mcdu::ace(before);
  j["mce_after"] = mcdu::mce(after);
  j["ace_after"] = mcdu::ace(after);

  const fs::path out(o.out_dir);
  write_atomic(out / "calibration.json", j.dump(2) + "\n");
  write_atomic(out / "reliability_before.csv", reliability_csv(before));
  write_atomic(out / "reliability_after.csv", reliability_csv(after));
  write_atomic(out / "reliability_before.svg",
               mcdu::figures::reliability_figure(
                   before, fmt::format("before: MCE {:.3f}  ACE {:.3f}", mcdu::mce(before), mcdu::ace(before))));
  write_atomic(out / "reliability_after.svg",
               mcdu::figures::reliability_figure(
                   after, fmt::format("after (T={:.4f}): MCE {:.3f}  ACE {:.3f}", t, mcdu::mce(after), mcdu::ace(after))));

  std::cout << fmt::format("temperature: {:.6f}\n", t);
  std::cout << fmt::format("MCE: {:.6f} -> {:.6f}\n", mcdu::mce(before), mcdu::mce(after));
  std::cout << fmt::format("ACE: {:.6f} -> {:.6f}\n", mcdu::ace(before), mcdu::ace(after));
  if (t >= 0.95 && t <= 1.05) std::cout << "note: already calibrated (temperature within 5% of 1)\n";
  return 0;
}

// ---------------------------------------------------------------- eval

int cmd_eval(const Options& o, const std::vector<std::string>& samples, const std::vector<std::string>& clusters,
             const std::vector<std::string>& gt_files, const std::string& mode) {
  std::vector<std::string> inputs = samples;
  inputs.insert(inputs.end(), clusters.begin(), clusters.end());
  inputs.insert(inputs.end(), gt_files.begin(), gt_files.end());
  Json extra;
  extra["mode"] = mode;
  write_manifest(o, "eval", inputs, extra);
  const auto images = load_pairs(samples, clusters, o.jobs);

  std::map<std::string, std::pair<int, int>> dims;
  for (const auto& im : images) dims[im.samples.image_id] = {im.samples.height, im.samples.width};
  const mcdu::ImageDims lookup = [&](const std::string& id) -> std::optional<std::pair<int, int>> {
    const auto it = dims.find(id);
    if (it == dims.end()) return std::nullopt;
    return it->second;
  };
  std::vector<mcdu::GroundTruthInstance> gts;
  for (const auto& path : gt_files) {
    std::istringstream in(read_file(path));
    try {
      auto part = mcdu::parse_ground_truth(in, lookup);
      for (auto& g : part) {
        if (!dims.count(g.image_id)) throw mcdu::DataError(path + ": ground truth for unknown image '" + g.image_id + "'");
        gts.push_back(std::move(g));
      }
    } catch (const mcdu::ParseError& e) {
      throw mcdu::DataError(path + ": " + e.what());
    }
  }

  std::vector<std::vector<mcdu::PredictedInstance>> per_image(images.size());
  parallel_for(images.size(), o.jobs, [&](std::size_t i) {
    for (const auto& c : images[i].clusters) {
      per_image[i].push_back(mcdu::cluster_to_detection(mcdu::build_report(c, o.mask_threshold), images[i].samples.image_id));
    }
  });
  std::vector<mcdu::PredictedInstance> preds;
  for (auto& v : per_image) preds.insert(preds.end(), v.begin(), v.end());

  const fs::path out(o.out_dir);
  for (auto m : {mcdu::EvalMode::Box, mcdu::EvalMode::Mask}) {
    if (mode != "both" && mode != mcdu::to_string(m)) continue;
    const auto res = mcdu::match_and_score(preds, gts, 0.5, m);
    std::ostringstream csv;
    mcdu::write_eval_csv(csv, res);
    write_atomic(out / (std::string("eval_") + mcdu::to_string(m) + ".csv"), csv.str());
    if (res.map50) {
      std::cout << fmt::format("{} mAP@0.5: {:.6f} over {} classes\n", mcdu::to_string(m), *res.map50,
                               res.per_class.size());
    } else {
      std::cout << mcdu::to_string(m) << " mAP@0.5: undefined (no ground truth)\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cluster Monte-Carlo dropout detection samples and report their uncertainty."};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();

  Options o;
  app.add_option("--seed", o.seed, "Root seed; every random stream derives from it")->capture_default_str();
  app.add_option("--jobs", o.jobs, "Images processed in parallel")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
  app.add_option("--algorithm", o.algorithm, "Clustering algorithm")
      ->check(CLI::IsMember({"bgm", "agg"}))
      ->capture_default_str();
  app.add_option("--split-threshold", o.split_threshold, "Re-cluster clusters larger than this")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--background-threshold", o.background_threshold, "Drop detections with background score above this")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  app.add_option("--mask-threshold", o.mask_threshold, "Consensus mask threshold on the mean mask")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  app.add_option("--bins", o.bins, "Reliability diagram bins")->check(CLI::PositiveNumber)->capture_default_str();

  std::string spec_path;
  auto* synth = app.add_subcommand("synth", "Generate synthetic sample, ground-truth and label files");
  synth->add_option("spec", spec_path, "Scene description (JSON)")->required();

  std::vector<std::string> cluster_files;
  auto* cluster = app.add_subcommand("cluster", "Cluster the detections of one or more sample files");
  cluster->add_option("samples", cluster_files, "Sample files")->required();

  std::vector<std::string> samples, clusters, gts;
  std::string mode = "both";
  auto* report = app.add_subcommand("report", "Per-cluster uncertainty reports and figures");
  report->add_option("--samples", samples, "Sample file (repeatable, paired with --clusters)")->required();
  report->add_option("--clusters", clusters, "Clusters file (repeatable)")->required();

  std::string records_path;
  auto* calibrate = app.add_subcommand("calibrate", "Fit a temperature and compare reliability before and after");
  calibrate->add_option("records", records_path, "Calibration records (JSONL)")->required();

  auto* eval = app.add_subcommand("eval", "mAP@0.5 of clustered predictions against ground truth");
  eval->add_option("--samples", samples, "Sample file (repeatable, paired with --clusters)")->required();
  eval->add_option("--clusters", clusters, "Clusters file (repeatable)")->required();
  eval->add_option("--gt", gts, "Ground-truth file (repeatable)")->required();
  eval->add_option("--mode", mode, "box, mask or both")->check(CLI::IsMember({"box", "mask", "both"}))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*synth) return cmd_synth(o, spec_path);
    if (*cluster) return cmd_cluster(o, cluster_files);
    if (*report) return cmd_report(o, samples, clusters);
    if (*calibrate) return cmd_calibrate(o, records_path);
    if (*eval) return cmd_eval(o, samples, clusters, gts, mode);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const mcdu::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

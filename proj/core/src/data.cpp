#include "slad/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace slad {

namespace fs = std::filesystem;

DatasetDescriptor Dataset::describe() const {
  DatasetDescriptor d;
  d.kind = id.substr(0, id.find(':'));
  d.classes = num_classes;
  d.n_train = train_idx.size();
  d.n_val = val_idx.size();
  d.n_test = test_idx.size();
  d.image_size = image_size;
  d.params = id;
  return d;
}

std::string SynthConfig::describe() const {
  std::ostringstream os;
  os << "synthetic:c" << classes << ":n" << train_per_class << ":s"
     << image_size << ":f" << freq_base << ":seed" << seed;
  return os.str();
}

Dataset synth_dataset(const SynthConfig& cfg) {
  if (cfg.classes < 2) {
    throw ConfigError("synth_dataset: need at least 2 classes");
  }
  Dataset ds;
  ds.image_size = cfg.image_size;
  ds.channels = cfg.channels;
  ds.num_classes = cfg.classes;
  ds.id = cfg.describe();
  std::size_t total =
      cfg.classes * (cfg.train_per_class + cfg.test_per_class);
  ds.images.resize(total * ds.sample_values());
  ds.labels.resize(total);

  Rng rng(derive_seed(cfg.seed, "synth"));
  std::size_t S = cfg.image_size;
  std::size_t sample = 0;
  // per-class texture parameters: orientation sweeps half a turn, frequency
  // cycles through three bands, phase offsets follow the golden angle
  auto emit = [&](std::size_t cls, std::size_t count,
                  std::vector<std::size_t>& split) {
    double theta = M_PI * static_cast<double>(cls) /
                   static_cast<double>(cfg.classes);
    double freq = cfg.freq_base + cfg.freq_step * static_cast<double>(cls % 3);
    double base_phase = 2.0 * M_PI * std::fmod(0.618033988749895 *
                                               static_cast<double>(cls + 1),
                                               1.0);
    double ct = std::cos(theta), st = std::sin(theta);
    for (std::size_t k = 0; k < count; ++k) {
      double amp = rng.uniform(cfg.amp_lo, cfg.amp_hi);
      double jitter = rng.uniform(-cfg.phase_jitter, cfg.phase_jitter);
      double* img = ds.images.data() + sample * ds.sample_values();
      for (std::size_t y = 0; y < S; ++y) {
        double v = 2.0 * static_cast<double>(y) / static_cast<double>(S - 1) -
                   1.0;
        for (std::size_t x = 0; x < S; ++x) {
          double u = 2.0 * static_cast<double>(x) /
                         static_cast<double>(S - 1) -
                     1.0;
          double wave = amp * std::sin(M_PI * freq * (u * ct + v * st) +
                                       base_phase + jitter);
          for (std::size_t ch = 0; ch < cfg.channels; ++ch) {
            img[(y * S + x) * cfg.channels + ch] =
                wave + rng.normal(0.0, cfg.noise);
          }
        }
      }
      ds.labels[sample] = cls;
      split.push_back(sample);
      ++sample;
    }
  };

  std::vector<std::size_t> train_all;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    emit(c, cfg.train_per_class, train_all);
  }
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    emit(c, cfg.test_per_class, ds.test_idx);
  }
  // stratified 10% validation carve: the last tenth of each class block
  std::size_t val_per_class =
      std::max<std::size_t>(1, (cfg.train_per_class + 9) / 10);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    std::size_t begin = c * cfg.train_per_class;
    std::size_t cut = cfg.train_per_class - val_per_class;
    for (std::size_t k = 0; k < cfg.train_per_class; ++k) {
      (k < cut ? ds.train_idx : ds.val_idx).push_back(train_all[begin + k]);
    }
  }
  return ds;
}

namespace {

struct RawImage {
  std::size_t w = 0, h = 0, channels = 0;
  std::vector<unsigned char> pixels;  // row-major, interleaved
};

bool read_pnm(const fs::path& path, RawImage& out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return false;
  std::string magic;
  is >> magic;
  if (magic != "P6" && magic != "P5") return false;
  auto next_int = [&is]() -> long {
    // skips whitespace and '#' comments
    for (;;) {
      int c = is.peek();
      if (c == '#') {
        std::string line;
        std::getline(is, line);
      } else if (std::isspace(c)) {
        is.get();
      } else {
        break;
      }
    }
    long v = -1;
    is >> v;
    return v;
  };
  long w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) return false;
  is.get();  // single whitespace before binary payload
  out.w = static_cast<std::size_t>(w);
  out.h = static_cast<std::size_t>(h);
  out.channels = magic == "P6" ? 3 : 1;
  out.pixels.resize(out.w * out.h * out.channels);
  is.read(reinterpret_cast<char*>(out.pixels.data()),
          static_cast<std::streamsize>(out.pixels.size()));
  return static_cast<std::size_t>(is.gcount()) == out.pixels.size();
}

// bilinear resize + [0,255] -> [-1,1]; grayscale replicates to 3 channels
void resample_into(const RawImage& src, std::size_t S, std::size_t channels,
                   double* dst) {
  for (std::size_t y = 0; y < S; ++y) {
    double fy = S > 1 ? static_cast<double>(y) * (src.h - 1) / (S - 1) : 0.0;
    std::size_t y0 = static_cast<std::size_t>(fy);
    std::size_t y1 = std::min(y0 + 1, src.h - 1);
    double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < S; ++x) {
      double fx = S > 1 ? static_cast<double>(x) * (src.w - 1) / (S - 1) : 0.0;
      std::size_t x0 = static_cast<std::size_t>(fx);
      std::size_t x1 = std::min(x0 + 1, src.w - 1);
      double wx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < channels; ++ch) {
        std::size_t sc = src.channels == 1 ? 0 : ch;
        auto px = [&](std::size_t yy, std::size_t xx) {
          return static_cast<double>(
              src.pixels[(yy * src.w + xx) * src.channels + sc]);
        };
        double top = px(y0, x0) * (1.0 - wx) + px(y0, x1) * wx;
        double bot = px(y1, x0) * (1.0 - wx) + px(y1, x1) * wx;
        double v = top * (1.0 - wy) + bot * wy;
        dst[(y * S + x) * channels + ch] = v / 127.5 - 1.0;
      }
    }
  }
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool dirs_only) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (dirs_only ? e.is_directory() : e.is_regular_file()) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

void load_split_dir(const fs::path& dir, Dataset& ds,
                    const std::map<std::string, std::size_t>& class_ids,
                    std::vector<std::size_t>& split,
                    ImageFolderStats* stats) {
  for (const fs::path& cls_dir : sorted_entries(dir, true)) {
    auto it = class_ids.find(cls_dir.filename().string());
    if (it == class_ids.end()) {
      throw DataError("image folder: class '" + cls_dir.filename().string() +
                      "' in " + dir.string() + " missing from train split");
    }
    std::size_t loaded = 0;
    for (const fs::path& file : sorted_entries(cls_dir, false)) {
      RawImage raw;
      if (!read_pnm(file, raw)) {
        std::cerr << "warning: skipping unreadable image " << file << "\n";
        if (stats) ++stats->skipped_files;
        continue;
      }
      std::size_t at = ds.labels.size();
      ds.images.resize((at + 1) * ds.sample_values());
      resample_into(raw, ds.image_size, ds.channels,
                    ds.images.data() + at * ds.sample_values());
      ds.labels.push_back(it->second);
      split.push_back(at);
      ++loaded;
    }
    if (loaded == 0) {
      throw DataError("image folder: class '" + cls_dir.filename().string() +
                      "' has no decodable images in " + dir.string());
    }
  }
}

}  // namespace

Dataset load_image_folder(const ImageFolderConfig& cfg,
                          ImageFolderStats* stats) {
  if (!fs::is_directory(cfg.path)) {
    throw DataError("image folder: " + cfg.path.string() +
                    " is not a directory");
  }
  Dataset ds;
  ds.image_size = cfg.image_size;
  ds.channels = 3;
  ds.augment_hflip = cfg.train_hflip;
  ds.id = "image-folder:" + cfg.path.filename().string() + ":s" +
          std::to_string(cfg.image_size);

  bool split_layout = fs::is_directory(cfg.path / "train");
  fs::path train_dir = split_layout ? cfg.path / "train" : cfg.path;

  std::map<std::string, std::size_t> class_ids;
  for (const fs::path& cls_dir : sorted_entries(train_dir, true)) {
    class_ids.emplace(cls_dir.filename().string(), class_ids.size());
  }
  if (class_ids.size() < 2) {
    throw DataError("image folder: need at least 2 class directories under " +
                    train_dir.string());
  }
  ds.num_classes = class_ids.size();
  if (stats) {
    stats->class_names.resize(class_ids.size());
    for (const auto& [name, idx] : class_ids) stats->class_names[idx] = name;
  }

  load_split_dir(train_dir, ds, class_ids, ds.train_idx, stats);
  bool have_val = split_layout && fs::is_directory(cfg.path / "val");
  if (have_val) {
    load_split_dir(cfg.path / "val", ds, class_ids, ds.val_idx, stats);
  }
  if (split_layout && fs::is_directory(cfg.path / "test")) {
    load_split_dir(cfg.path / "test", ds, class_ids, ds.test_idx, stats);
  }
  if (!have_val) {
    // deterministic 10% carve: every tenth file of each class listing
    std::vector<std::size_t> kept;
    std::vector<std::size_t> per_class_count(ds.num_classes, 0);
    for (std::size_t idx : ds.train_idx) {
      std::size_t k = per_class_count[ds.labels[idx]]++;
      (k % 10 == 9 ? ds.val_idx : kept).push_back(idx);
    }
    if (ds.val_idx.empty() && kept.size() > ds.num_classes) {
      // tiny datasets: move one sample per class
      std::vector<std::size_t> kept2;
      std::fill(per_class_count.begin(), per_class_count.end(), 0);
      for (std::size_t idx : kept) {
        std::size_t k = per_class_count[ds.labels[idx]]++;
        (k == 0 ? ds.val_idx : kept2).push_back(idx);
      }
      kept = std::move(kept2);
    }
    ds.train_idx = std::move(kept);
  }
  return ds;
}

double nearest_centroid_accuracy(const Dataset& ds) {
  std::size_t dim = ds.sample_values();
  std::vector<double> centroids(ds.num_classes * dim, 0.0);
  std::vector<std::size_t> counts(ds.num_classes, 0);
  for (std::size_t idx : ds.train_idx) {
    const double* img = ds.images.data() + idx * dim;
    double* c = centroids.data() + ds.labels[idx] * dim;
    for (std::size_t i = 0; i < dim; ++i) c[i] += img[i];
    ++counts[ds.labels[idx]];
  }
  for (std::size_t cls = 0; cls < ds.num_classes; ++cls) {
    if (counts[cls] == 0) {
      throw DataError("nearest_centroid_accuracy: class " +
                      std::to_string(cls) + " has no training samples");
    }
    double inv = 1.0 / static_cast<double>(counts[cls]);
    double* c = centroids.data() + cls * dim;
    for (std::size_t i = 0; i < dim; ++i) c[i] *= inv;
  }
  const auto& eval = ds.eval_split();
  if (eval.empty()) {
    throw DataError("nearest_centroid_accuracy: no evaluation split");
  }
  std::size_t hits = 0;
  for (std::size_t idx : eval) {
    const double* img = ds.images.data() + idx * dim;
    double best = 0.0;
    std::size_t best_cls = 0;
    for (std::size_t cls = 0; cls < ds.num_classes; ++cls) {
      const double* c = centroids.data() + cls * dim;
      double dist = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        double d = img[i] - c[i];
        dist += d * d;
      }
      if (cls == 0 || dist < best) {
        best = dist;
        best_cls = cls;
      }
    }
    if (best_cls == ds.labels[idx]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(eval.size());
}

Tensor make_image_batch(const Dataset& ds, std::span<const std::size_t> idx,
                        const std::vector<bool>* hflip) {
  std::size_t S = ds.image_size, C = ds.channels;
  std::size_t sample = ds.sample_values();
  std::vector<double> v(idx.size() * sample);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double* src = ds.images.data() + idx[i] * sample;
    double* dst = v.data() + i * sample;
    if (hflip && (*hflip)[i]) {
      for (std::size_t y = 0; y < S; ++y) {
        for (std::size_t x = 0; x < S; ++x) {
          const double* sp = src + (y * S + (S - 1 - x)) * C;
          double* dp = dst + (y * S + x) * C;
          for (std::size_t ch = 0; ch < C; ++ch) dp[ch] = sp[ch];
        }
      }
    } else {
      std::copy(src, src + sample, dst);
    }
  }
  return Tensor::from_data({idx.size(), S, S, C}, std::move(v));
}

std::vector<std::size_t> gather_labels(const Dataset& ds,
                                       std::span<const std::size_t> idx) {
  std::vector<std::size_t> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = ds.labels[idx[i]];
  return out;
}

void export_ppm_folder(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  // map [-3,3] to [0,255]; clip beyond
  auto quant = [](double v) -> unsigned char {
    double q = (v / 3.0 + 1.0) * 127.5;
    if (q < 0.0) q = 0.0;
    if (q > 255.0) q = 255.0;
    return static_cast<unsigned char>(std::lround(q));
  };
  std::vector<std::size_t> counter(ds.num_classes, 0);
  auto write_split = [&](const std::vector<std::size_t>& split,
                         const std::string& name) {
    if (split.empty()) return;
    for (std::size_t idx : split) {
      std::size_t cls = ds.labels[idx];
      fs::path cls_dir = dir / name / ("class_" + std::to_string(cls));
      fs::create_directories(cls_dir);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%06zu.ppm", counter[cls]++);
      std::ofstream os(cls_dir / buf, std::ios::binary);
      if (!os) throw IoError("cannot write " + (cls_dir / buf).string());
      os << "P6\n"
         << ds.image_size << ' ' << ds.image_size << "\n255\n";
      const double* img = ds.images.data() + idx * ds.sample_values();
      for (std::size_t i = 0; i < ds.image_size * ds.image_size; ++i) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
          unsigned char b =
              quant(ds.channels == 3 ? img[i * ds.channels + ch]
                                     : img[i * ds.channels]);
          os.put(static_cast<char>(b));
        }
      }
    }
  };
  write_split(ds.train_idx, "train");
  write_split(ds.val_idx, "val");
  write_split(ds.test_idx, "test");
}

}  // namespace slad

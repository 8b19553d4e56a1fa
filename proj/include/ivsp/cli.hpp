#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ivsp/checkpoint.hpp"
#include "ivsp/image_io.hpp"
#include "ivsp/jpeg_codec.hpp"
#include "ivsp/jpeg_sim.hpp"
#include "ivsp/metrics.hpp"
#include "ivsp/synthetic.hpp"
#include "ivsp/train.hpp"

// Command-line surface. Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric
// failure. Partially written outputs are removed when a command fails.

namespace ivsp {

namespace cli {

// unlinks registered outputs unless release() is called
class OutputGuard {
public:
  ~OutputGuard() {
    if (armed_)
      for (const auto& p : paths_) {
        std::error_code ec;
        std::filesystem::remove(p, ec);
      }
  }
  void track(const std::string& path) { paths_.push_back(path); }
  void release() { armed_ = false; }

private:
  std::vector<std::string> paths_;
  bool armed_ = true;
};

inline Tensor read_image_any(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(c));
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm") return read_ppm(path);
  if (ext == ".jpg" || ext == ".jpeg") return codec_decode(read_file_bytes(path));
  throw DataError("unsupported image format: " + path);
}

inline void write_image_any(const Tensor& rgb, const std::string& path, int png_bits = 8) {
  std::string ext = std::filesystem::path(path).extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(c));
  if (ext == ".png") {
    write_png(rgb, path, png_bits);
  } else if (ext == ".ppm") {
    write_ppm(rgb, path);
  } else {
    throw DataError("unsupported output image format: " + path);
  }
}

inline void apply_config_file(const std::string& path, TrainConfig& cfg) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config file: " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  std::string text = buf.str();
  size_t first = text.find_first_not_of(" \t\r\n");
  auto set_kv = [&](const std::string& key, const std::string& value) {
    auto as_bool = [&] {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw DataError("config: boolean expected for " + key);
    };
    if (key == "lambda") cfg.lambda = std::stod(value);
    else if (key == "steps") cfg.steps = std::stoll(value);
    else if (key == "batch") cfg.batch = std::stoll(value);
    else if (key == "crop") cfg.crop = std::stoll(value);
    else if (key == "lr") cfg.lr = std::stod(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "jpeg_in_loop") cfg.jpeg_in_loop = as_bool();
    else if (key == "jpeg_quality") cfg.jpeg_quality = std::stoi(value);
    else if (key == "jpeg_on_target") cfg.jpeg_on_target = as_bool();
    else if (key == "blocks") cfg.blocks = std::stoll(value);
    else if (key == "hidden") cfg.hidden = std::stoll(value);
    else if (key == "checkpoint_interval") cfg.checkpoint_interval = std::stoll(value);
    else throw DataError("config: unknown key " + key);
  };
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed JSON config " + path + ": " + e.what());
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& v = it.value();
      set_kv(it.key(), v.is_string() ? v.get<std::string>() : v.dump());
    }
  } else {
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) {
      size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      size_t eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r");
        size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (!key.empty()) set_kv(key, value);
    }
  }
}

struct DatasetPaths {
  std::vector<std::string> scenes;   // .pgm containers
  std::vector<std::string> targets;  // .png renders
};

inline DatasetPaths scan_dataset(const std::string& dir) {
  DatasetPaths out;
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir);
  std::vector<std::string> pgms;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::string name = entry.path().filename().string();
    if (name.rfind("scene_", 0) == 0 && entry.path().extension() == ".pgm")
      pgms.push_back(entry.path().string());
  }
  std::sort(pgms.begin(), pgms.end());
  for (const std::string& p : pgms) {
    std::filesystem::path target(p);
    target.replace_extension(".png");
    std::string tname = target.filename().string();
    tname.replace(0, 6, "target_");
    target.replace_filename(tname);
    if (!std::filesystem::exists(target))
      throw DataError("missing target image for " + p);
    out.scenes.push_back(p);
    out.targets.push_back(target.string());
  }
  if (out.scenes.empty()) throw DataError("no scene_*.pgm files in " + dir);
  return out;
}

inline std::vector<PairedSample> load_dataset(const DatasetPaths& paths) {
  std::vector<PairedSample> out;
  for (size_t i = 0; i < paths.scenes.size(); ++i) {
    BayerFrame frame = read_bayer_container(paths.scenes[i]);
    out.push_back({preprocess_frame(frame), read_png(paths.targets[i])});
  }
  return out;
}

inline void print_report_json_and_table(const nlohmann::json& j,
                                        const std::vector<std::pair<std::string, std::string>>& rows) {
  std::cout << j.dump() << "\n";
  size_t width = 0;
  for (const auto& [k, v] : rows) width = std::max(width, k.size());
  for (const auto& [k, v] : rows)
    std::cout << "  " << k << std::string(width - k.size() + 2, ' ') << v << "\n";
}

// recovered RAW -> container on disk, undoing gamma and white balance
inline BayerFrame postprocess_to_frame(const Tensor& recovered, const BayerFrame& meta) {
  Tensor linear = gamma_decode(clamp01(recovered));
  BayerFrame rem = remosaic(linear, meta.pattern);
  rem.wb_gains = meta.wb_gains;
  rem.bit_depth = meta.bit_depth;
  BayerFrame out = inverse_white_balance(rem);
  out.bit_depth = meta.bit_depth;
  quantize_frame(out);
  return out;
}

inline int command_synth_data(const std::string& out_dir, int count, int64_t size, uint64_t seed) {
  std::filesystem::create_directories(out_dir);
  OutputGuard guard;
  for (int i = 0; i < count; ++i) {
    SynthSample s = make_synth_sample(size, seed + static_cast<uint64_t>(i) * 1000003ULL);
    char idx[16];
    std::snprintf(idx, sizeof idx, "%03d", i);
    std::string scene = out_dir + "/scene_" + idx + ".pgm";
    std::string target = out_dir + "/target_" + idx + ".png";
    guard.track(scene);
    guard.track(sidecar_path(scene));
    guard.track(target);
    write_bayer_container(s.frame, scene);
    write_png(s.rgb_target, target, 8);
  }
  guard.release();
  std::cout << "wrote " << count << " paired samples to " << out_dir << "\n";
  return 0;
}

}  // namespace cli

inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"invertible camera ISP: bidirectional RAW<->sRGB with a JPEG-robust inverse"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate a paired synthetic dataset");
  int sd_count = 10;
  int64_t sd_size = 128;
  uint64_t sd_seed = 0;
  std::string sd_out;
  synth->add_option("--count", sd_count, "number of images");
  synth->add_option("--size", sd_size, "square image size (even)");
  synth->add_option("--seed", sd_seed, "RNG seed");
  synth->add_option("--out", sd_out, "output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train the flow on a paired dataset");
  std::string tr_data, tr_out, tr_config, tr_log;
  TrainConfig tcfg;
  int64_t tr_steps = tcfg.steps, tr_batch = tcfg.batch, tr_crop = tcfg.crop,
          tr_blocks = tcfg.blocks, tr_hidden = tcfg.hidden, tr_interval = tcfg.checkpoint_interval;
  double tr_lambda = tcfg.lambda, tr_lr = tcfg.lr;
  uint64_t tr_seed = tcfg.seed;
  int tr_quality = tcfg.jpeg_quality;
  bool tr_no_sim = false, tr_on_target = false;
  tr->add_option("--data", tr_data, "dataset directory (scene_*.pgm + target_*.png)")->required();
  tr->add_option("--out", tr_out, "checkpoint path")->required();
  tr->add_option("--config", tr_config, "config file (key=value or JSON; IVSP_CONFIG sets default)");
  tr->add_option("--steps", tr_steps, "optimization steps");
  tr->add_option("--batch", tr_batch, "batch size");
  tr->add_option("--crop", tr_crop, "training crop (even, >=16)");
  tr->add_option("--lambda", tr_lambda, "inverse-loss weight");
  tr->add_option("--lr", tr_lr, "Adam learning rate");
  tr->add_option("--seed", tr_seed, "RNG seed");
  tr->add_option("--quality", tr_quality, "simulator JPEG quality");
  tr->add_option("--blocks", tr_blocks, "invertible blocks");
  tr->add_option("--hidden", tr_hidden, "subnet hidden width");
  tr->add_option("--ckpt-interval", tr_interval, "steps between checkpoints");
  tr->add_option("--loss-log", tr_log, "CSV loss log path");
  tr->add_flag("--no-jpeg-sim", tr_no_sim, "train without the JPEG simulator");
  tr->add_flag("--jpeg-on-target", tr_on_target, "simulate JPEG of the target instead of f(x)");

  // render
  auto* rn = app.add_subcommand("render", "RAW container -> JPEG via the forward pass");
  std::string rn_model, rn_in, rn_out;
  int rn_quality = 90;
  bool rn_png = false;
  rn->add_option("--model", rn_model, "checkpoint")->required();
  rn->add_option("--in", rn_in, "Bayer container (.pgm)")->required();
  rn->add_option("--out", rn_out, "output image (.jpg, or .png with --png)")->required();
  rn->add_option("--quality", rn_quality, "JPEG quality");
  rn->add_flag("--png", rn_png, "write a lossless 16-bit PNG instead of JPEG");

  // invert
  auto* iv = app.add_subcommand("invert", "JPEG -> RAW container via the inverse pass");
  std::string iv_model, iv_in, iv_out, iv_meta, iv_ref;
  iv->add_option("--model", iv_model, "checkpoint")->required();
  iv->add_option("--in", iv_in, "rendered image (.jpg or .png)")->required();
  iv->add_option("--out", iv_out, "recovered Bayer container (.pgm)")->required();
  iv->add_option("--meta", iv_meta, "sidecar JSON with pattern/bit_depth/wb_gains");
  iv->add_option("--ref", iv_ref, "reference Bayer container (metadata + PSNR report)");

  // roundtrip
  auto* rt = app.add_subcommand("roundtrip", "render then invert, reporting fidelity");
  std::string rt_model, rt_in, rt_rgb, rt_out;
  int rt_quality = 90;
  bool rt_png = false;
  rt->add_option("--model", rt_model, "checkpoint")->required();
  rt->add_option("--in", rt_in, "Bayer container (.pgm)")->required();
  rt->add_option("--quality", rt_quality, "JPEG quality");
  rt->add_flag("--png", rt_png, "use a lossless 16-bit PNG intermediate");
  rt->add_option("--keep-rgb", rt_rgb, "also write the rendered image here");
  rt->add_option("--out", rt_out, "also write the recovered container here");

  // metrics
  auto* mt = app.add_subcommand("metrics", "PSNR/SSIM between two images or containers");
  std::string mt_a, mt_b;
  double mt_peak = 1.0;
  mt->add_option("--a", mt_a, "first image (.png/.ppm/.jpg) or container (.pgm)")->required();
  mt->add_option("--b", mt_b, "second image or container")->required();
  mt->add_option("--peak", mt_peak, "PSNR peak");

  // jpegsim
  auto* js = app.add_subcommand("jpegsim", "run the differentiable JPEG simulator on an image");
  std::string js_in, js_out;
  int js_quality = 90, js_terms = 10;
  bool js_true_round = false, js_no_round = false, js_dump = false;
  js->add_option("--in", js_in, "input image (.png/.ppm/.jpg)");
  js->add_option("--out", js_out, "output image (.png/.ppm)");
  js->add_option("--quality", js_quality, "JPEG quality");
  js->add_option("--terms", js_terms, "Fourier rounding terms (K)");
  js->add_flag("--true-round", js_true_round, "use exact rounding instead of the Fourier series");
  js->add_flag("--no-round", js_no_round, "skip quantization rounding entirely");
  js->add_flag("--dump-tables", js_dump, "print the quality-scaled quantization tables");

  std::vector<const char*> argv;
  argv.push_back("ivsp");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) {
      if (sd_size % 2) throw DataError("--size must be even");
      return cli::command_synth_data(sd_out, sd_count, sd_size, sd_seed);
    }

    if (tr->parsed()) {
      if (tr_config.empty())
        if (const char* env = std::getenv("IVSP_CONFIG")) tr_config = env;
      if (!tr_config.empty()) cli::apply_config_file(tr_config, tcfg);
      if (tr->count("--steps")) tcfg.steps = tr_steps;
      if (tr->count("--batch")) tcfg.batch = tr_batch;
      if (tr->count("--crop")) tcfg.crop = tr_crop;
      if (tr->count("--lambda")) tcfg.lambda = tr_lambda;
      if (tr->count("--lr")) tcfg.lr = tr_lr;
      if (tr->count("--seed")) tcfg.seed = tr_seed;
      if (tr->count("--quality")) tcfg.jpeg_quality = tr_quality;
      if (tr->count("--blocks")) tcfg.blocks = tr_blocks;
      if (tr->count("--hidden")) tcfg.hidden = tr_hidden;
      if (tr->count("--ckpt-interval")) tcfg.checkpoint_interval = tr_interval;
      if (tr_no_sim) tcfg.jpeg_in_loop = false;
      if (tr_on_target) tcfg.jpeg_on_target = true;
      tcfg.checkpoint_path = tr_out;
      tcfg.loss_log_path = tr_log;
      tcfg.validate();

      auto samples = cli::load_dataset(cli::scan_dataset(tr_data));
      cli::OutputGuard guard;
      guard.track(tr_out);
      if (!tr_log.empty()) guard.track(tr_log);
      TrainResult result = train(samples, tcfg);
      if (result.aborted) {
        // the last good checkpoint stays on disk
        guard.release();
        std::cerr << "training aborted on a non-finite loss after "
                  << result.completed_steps << " steps\n";
        return 4;
      }
      guard.release();
      std::cout << "trained " << result.completed_steps << " steps";
      if (!result.history.empty())
        std::cout << ", final loss " << result.history.back().total;
      std::cout << ", checkpoint " << tr_out << "\n";
      return 0;
    }

    if (rn->parsed()) {
      FlowModel model = load_checkpoint(rn_model);
      BayerFrame frame = read_bayer_container(rn_in);
      Tensor x = preprocess_frame(frame);
      Tensor rendered = clamp01(model.forward(x));
      cli::OutputGuard guard;
      guard.track(rn_out);
      uint64_t payload = 0;
      if (rn_png) {
        auto bytes = encode_png(rendered, 16);
        payload = bytes.size();
        write_file_bytes(rn_out, bytes);
      } else {
        auto bytes = codec_encode(rendered, JpegConfig(rn_quality));
        payload = bytes.size();
        write_file_bytes(rn_out, bytes);
      }
      guard.release();
      CompressionReport rep = compression_report(frame, payload);
      nlohmann::json j = {{"output", rn_out},
                          {"bytes", rep.jpeg_bytes},
                          {"bmp_bytes", rep.bmp_bytes},
                          {"c_ratio", rep.c_ratio},
                          {"bpp", rep.bpp}};
      cli::print_report_json_and_table(
          j, {{"output", rn_out},
              {"compressed bytes", std::to_string(rep.jpeg_bytes)},
              {"uncompressed (BMP) bytes", std::to_string(rep.bmp_bytes)},
              {"compression ratio", std::to_string(rep.c_ratio)},
              {"bits per pixel", std::to_string(rep.bpp)}});
      return 0;
    }

    if (iv->parsed()) {
      FlowModel model = load_checkpoint(iv_model);
      Tensor rendered = cli::read_image_any(iv_in);
      BayerFrame meta;
      Tensor ref_input;
      if (!iv_ref.empty()) {
        meta = read_bayer_container(iv_ref);
        ref_input = preprocess_frame(meta);
      } else if (!iv_meta.empty()) {
        nlohmann::json j;
        std::ifstream ms(iv_meta);
        if (!ms) throw DataError("cannot open sidecar JSON: " + iv_meta);
        try {
          ms >> j;
        } catch (const nlohmann::json::exception& e) {
          throw DataError("malformed sidecar JSON " + iv_meta + ": " + e.what());
        }
        if (!j.contains("pattern") || !j.contains("bit_depth") || !j.contains("wb_gains"))
          throw DataError("sidecar JSON must declare pattern, bit_depth and wb_gains");
        meta.pattern = pattern_from_name(j["pattern"].get<std::string>());
        meta.bit_depth = j["bit_depth"].get<int>();
        for (size_t i = 0; i < 3; ++i) meta.wb_gains[i] = j["wb_gains"][i].get<float>();
      } else {
        throw DataError("invert needs --meta or --ref for pattern/bit depth/white balance");
      }
      Tensor recovered = clamp01(model.inverse(rendered));
      BayerFrame out_frame = cli::postprocess_to_frame(recovered, meta);
      cli::OutputGuard guard;
      guard.track(iv_out);
      guard.track(sidecar_path(iv_out));
      write_bayer_container(out_frame, iv_out);
      guard.release();
      nlohmann::json j = {{"output", iv_out}};
      std::vector<std::pair<std::string, std::string>> rows = {{"output", iv_out}};
      if (ref_input.defined()) {
        double raw_psnr = psnr(recovered, ref_input, 1.0);
        j["raw_psnr_db"] = raw_psnr;
        rows.push_back({"RAW PSNR (gamma space, dB)", std::to_string(raw_psnr)});
      }
      cli::print_report_json_and_table(j, rows);
      return 0;
    }

    if (rt->parsed()) {
      FlowModel model = load_checkpoint(rt_model);
      BayerFrame frame = read_bayer_container(rt_in);
      Tensor x = preprocess_frame(frame);
      Tensor rendered = clamp01(model.forward(x));

      std::vector<uint8_t> payload;
      Tensor decoded;
      if (rt_png) {
        payload = encode_png(rendered, 16);
        decoded = decode_png(payload);
      } else {
        payload = codec_encode(rendered, JpegConfig(rt_quality));
        decoded = codec_decode(payload);
      }
      Tensor recovered = clamp01(model.inverse(decoded));

      cli::OutputGuard guard;
      if (!rt_rgb.empty()) {
        guard.track(rt_rgb);
        write_file_bytes(rt_rgb, payload);
      }
      if (!rt_out.empty()) {
        guard.track(rt_out);
        guard.track(sidecar_path(rt_out));
        write_bayer_container(cli::postprocess_to_frame(recovered, frame), rt_out);
      }
      guard.release();

      CompressionReport rep = compression_report(frame, payload.size());
      double raw_psnr = psnr(recovered, x, 1.0);
      double raw_maxabs = 0.0;
      for (int64_t i = 0; i < x.numel(); ++i)
        raw_maxabs = std::max(raw_maxabs,
                              std::fabs(static_cast<double>(recovered.raw()[i]) - x.raw()[i]));
      nlohmann::json j = {{"bytes", rep.jpeg_bytes},       {"bmp_bytes", rep.bmp_bytes},
                          {"c_ratio", rep.c_ratio},        {"bpp", rep.bpp},
                          {"raw_psnr_db", raw_psnr},       {"raw_max_abs", raw_maxabs},
                          {"intermediate", rt_png ? "png16" : "jpeg"}};
      cli::print_report_json_and_table(
          j, {{"intermediate", rt_png ? "png16" : "jpeg"},
              {"compressed bytes", std::to_string(rep.jpeg_bytes)},
              {"compression ratio", std::to_string(rep.c_ratio)},
              {"bits per pixel", std::to_string(rep.bpp)},
              {"RAW PSNR (gamma space, dB)", std::to_string(raw_psnr)},
              {"RAW max abs error", std::to_string(raw_maxabs)}});
      return 0;
    }

    if (mt->parsed()) {
      bool bayer_mode = std::filesystem::path(mt_a).extension() == ".pgm";
      nlohmann::json j;
      std::vector<std::pair<std::string, std::string>> rows;
      if (bayer_mode) {
        Tensor a = preprocess_frame(read_bayer_container(mt_a));
        Tensor b = preprocess_frame(read_bayer_container(mt_b));
        double p = psnr(a, b, mt_peak);
        j = {{"mode", "raw"}, {"psnr_db", p}};
        rows = {{"mode", "raw (gamma space)"}, {"PSNR (dB)", std::to_string(p)}};
      } else {
        Tensor a = cli::read_image_any(mt_a);
        Tensor b = cli::read_image_any(mt_b);
        double p = psnr(a, b, mt_peak);
        double s = ssim(luma(a), luma(b), mt_peak);
        j = {{"mode", "rgb"}, {"psnr_db", p}, {"ssim", s}};
        rows = {{"mode", "rgb"},
                {"PSNR (dB)", std::to_string(p)},
                {"SSIM (luma)", std::to_string(s)}};
      }
      cli::print_report_json_and_table(j, rows);
      return 0;
    }

    if (js->parsed()) {
      JpegConfig cfg(js_quality, js_terms);
      if (js_dump) std::cout << cfg.dump_tables();
      if (!js_in.empty()) {
        if (js_out.empty()) throw DataError("jpegsim needs --out when --in is given");
        Tensor img = cli::read_image_any(js_in);
        RoundMode mode = js_no_round ? RoundMode::None
                         : js_true_round ? RoundMode::Exact
                                         : RoundMode::Fourier;
        Tensor out = clamp01(jpeg_simulate(img, cfg, mode));
        cli::OutputGuard guard;
        guard.track(js_out);
        cli::write_image_any(out, js_out);
        guard.release();
        std::cout << "wrote " << js_out << "\n";
      } else if (!js_dump) {
        throw DataError("jpegsim needs --in/--out or --dump-tables");
      }
      return 0;
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}

}  // namespace ivsp

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nmt/core/error.hpp"
#include "nmt/core/rng.hpp"
#include "nmt/encoding/chords.hpp"
#include "nmt/encoding/codec.hpp"
#include "nmt/eval/evaluate.hpp"
#include "nmt/gen/generate.hpp"
#include "nmt/midi/midi_io.hpp"
#include "nmt/midi/preprocess.hpp"
#include "nmt/model/model.hpp"
#include "nmt/synth/synth.hpp"
#include "nmt/tensor/checkpoint.hpp"
#include "nmt/train/trainer.hpp"

#ifndef NMT_VERSION
#define NMT_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nmt;

namespace {

// ---------------------------------------------------------------- file helpers

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw RuntimeFailure("cannot write " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string hex_digest(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_digest(const fs::path& p) {
  if (!fs::is_regular_file(p)) return "";
  const auto bytes = midi::read_bytes(p);
  return hex_digest(fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
}

// Machine-readable record of one invocation: argv re-runs it, the digests
// detect drifted inputs.
struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json inputs = json::array();
  json config = json::object();
  std::uint64_t seed = 0;
  json outputs = json::object();

  void input(const fs::path& p) {
    inputs.push_back({{"path", fs::absolute(p).string()}, {"fnv1a", fs::is_directory(p) ? "directory" : file_digest(p)}});
  }

  void write(const fs::path& path) const {
    write_json(path, {{"command", command},
                      {"argv", argv},
                      {"inputs", inputs},
                      {"config", config},
                      {"config_digest", hex_digest(fnv1a(config.dump()))},
                      {"seed", seed},
                      {"outputs", outputs},
                      {"versions",
                       {{"nmt", NMT_VERSION}, {"compiler", __VERSION__}, {"nlohmann_json",
                         std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                             "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}}});
  }
};

// ---------------------------------------------------------------- corpus layout
//
// An ingested corpus directory holds pieces/<id>.mid (already on the grid),
// manifest.jsonl (one object per piece) and split.json.

struct Corpus {
  std::vector<std::string> ids;
  midi::CorpusSplit split;
  int resolution = 4;
};

Corpus read_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("corpus directory not found: " + dir.string());
  Corpus c;
  std::ifstream in(dir / "manifest.jsonl");
  if (!in) throw DataError("corpus has no manifest.jsonl: " + dir.string());
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) c.ids.push_back(json::parse(line).at("source_id").get<std::string>());
  const json s = read_json(dir / "split.json");
  try {
    c.split.train = s.at("train").get<std::vector<std::string>>();
    c.split.valid = s.at("valid").get<std::vector<std::string>>();
    c.split.test = s.at("test").get<std::vector<std::string>>();
    c.split.seed = s.at("seed").get<std::uint64_t>();
    c.resolution = s.at("resolution").get<int>();
  } catch (const json::exception& e) {
    throw DataError("split.json: " + std::string(e.what()));
  }
  return c;
}

const std::vector<std::string>& split_ids(const Corpus& c, const std::string& split) {
  if (split == "train") return c.split.train;
  if (split == "valid") return c.split.valid;
  if (split == "test") return c.split.test;
  throw ConfigError("unknown split '" + split + "' (expected train, valid or test)");
}

midi::Piece load_piece(const fs::path& dir, const std::string& id, const encoding::FeatureVocab* v = nullptr) {
  auto p = midi::read_midi_file(dir / "pieces" / (id + ".mid"));
  p.source_id = id;
  if (!v || v->features.chord) p.chords = encoding::detect_chords(p);
  return p;
}

std::vector<midi::Piece> load_pieces(const fs::path& dir, const std::vector<std::string>& ids,
                                     const encoding::FeatureVocab* v = nullptr) {
  std::vector<midi::Piece> out;
  for (const auto& id : ids) out.push_back(load_piece(dir, id, v));
  return out;
}

encoding::FeatureVocab read_vocab(const fs::path& p) { return encoding::vocab_from_json(read_json(p)); }

// ---------------------------------------------------------------- ingest

struct IngestArgs {
  fs::path in, out;
  int resolution = 4;
  std::size_t min_instruments = 0, min_notes = 64, max_notes = 20000;
  std::uint64_t seed = 0;
};

std::string piece_id(const fs::path& root, const fs::path& file) {
  std::string id = fs::relative(file, root).replace_extension().generic_string();
  for (char& ch : id)
    if (ch == '/' || ch == ' ') ch = '_';
  return id;
}

int run_ingest(const IngestArgs& a, Manifest& man) {
  if (!fs::is_directory(a.in)) throw DataError("input directory not found: " + a.in.string());
  if (a.resolution < 1) throw ConfigError("--resolution must be positive");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a.in)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".mid" || ext == ".midi" || ext == ".MID")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no MIDI files under " + a.in.string());

  std::vector<midi::Piece> pieces;
  std::map<std::string, std::size_t> failures;
  for (const auto& f : files) {
    try {
      auto p = midi::quantize(midi::read_midi_file(f), a.resolution);
      p.source_id = piece_id(a.in, f);
      p.measure_length();
      pieces.push_back(std::move(p));
    } catch (const DataError& e) {
      ++failures["unreadable"];
      std::cerr << "skip " << f.string() << ": " << e.what() << "\n";
    }
  }
  auto crit = midi::FilterCriteria::ingest_defaults();
  crit.min_instruments = a.min_instruments;
  crit.min_notes = a.min_notes;
  crit.max_notes = a.max_notes;
  const auto rep = midi::filter_corpus(pieces, crit);

  fs::create_directories(a.out / "pieces");
  std::ofstream manifest(a.out / "manifest.jsonl");
  std::vector<std::string> kept;
  for (std::size_t i : rep.kept) {
    const auto& p = pieces[i];
    midi::write_midi_file(p, a.out / "pieces" / (p.source_id + ".mid"));
    json instruments = json::array();
    std::set<midi::Instrument> seen;
    for (const auto& n : p.notes)
      if (seen.insert(n.instrument).second) instruments.push_back({{"program", n.instrument.program}, {"drum", n.instrument.is_drum}});
    manifest << json{{"source_id", p.source_id},
                     {"path", "pieces/" + p.source_id + ".mid"},
                     {"note_count", p.notes.size()},
                     {"instruments", instruments},
                     {"time_signature", {p.time_signature.numerator, p.time_signature.denominator}}}
                    .dump()
             << "\n";
    kept.push_back(p.source_id);
  }
  manifest.close();
  const auto split = midi::split_corpus(kept, a.seed);
  write_json(a.out / "split.json", {{"train", split.train},
                                    {"valid", split.valid},
                                    {"test", split.test},
                                    {"seed", split.seed},
                                    {"resolution", a.resolution}});
  const json filtered = {{"unreadable", failures["unreadable"]},
                         {"missing_time_signature", rep.missing_time_signature},
                         {"meter_changes", rep.meter_changes},
                         {"expressive_tempo", rep.expressive_tempo},
                         {"too_few_notes", rep.too_few_notes},
                         {"too_many_notes", rep.too_many_notes},
                         {"too_few_instruments", rep.too_few_instruments}};
  man.config = {{"resolution", a.resolution}, {"min_instruments", a.min_instruments}, {"min_notes", a.min_notes},
                {"max_notes", a.max_notes}};
  man.outputs = {{"files", files.size()}, {"kept", kept.size()}, {"rejected", filtered},
                 {"split", {{"train", split.train.size()}, {"valid", split.valid.size()}, {"test", split.test.size()}}}};
  std::cout << "ingested " << kept.size() << " of " << files.size() << " files (train " << split.train.size()
            << ", valid " << split.valid.size() << ", test " << split.test.size() << ")\n";
  return 0;
}

// ---------------------------------------------------------------- vocab

int run_vocab(const fs::path& in, const fs::path& out, const encoding::FeatureConfig& features, Manifest& man) {
  const Corpus c = read_corpus(in);
  const auto v = encoding::build_vocab(load_pieces(in, c.ids), features);
  write_json(out, encoding::to_json(v));
  man.config = {{"features", encoding::to_json(v)["features"]}};
  man.outputs = {{"vocab", fs::absolute(out).string()}};
  std::cout << "vocabulary: resolution " << v.resolution << ", " << v.beat_positions << " beat positions, duration cap "
            << v.duration_cap << "\n";
  return 0;
}

// ---------------------------------------------------------------- encode

int run_encode(encoding::Scheme scheme, const fs::path& vocab_file, const fs::path& in, const fs::path& out, bool dump,
               Manifest& man) {
  const auto v = read_vocab(vocab_file);
  const Corpus c = read_corpus(in);
  encoding::EncodeReport total;
  std::size_t tokens = 0;
  fs::create_directories(out);
  for (const auto& id : c.ids) {
    encoding::EncodeReport rep;
    auto seq = encoding::encode(load_piece(in, id, &v), v, scheme, &rep);
    seq.source_id = id;
    total += rep;
    tokens += seq.size();
    write_text(out / (id + ".json"), encoding::to_json(seq).dump() + "\n");
    if (dump) write_text(out / (id + ".txt"), encoding::token_dump(seq, v));
  }
  fs::copy_file(in / "split.json", out / "split.json", fs::copy_options::overwrite_existing);
  man.config = {{"scheme", encoding::scheme_name(scheme)}};
  man.outputs = {{"pieces", c.ids.size()},
                 {"tokens", tokens},
                 {"durations_clamped", total.durations_clamped},
                 {"tempos_clamped", total.tempos_clamped},
                 {"notes_merged", total.notes_merged},
                 {"measures_dropped", total.measures_dropped}};
  std::cout << "encoded " << c.ids.size() << " pieces as " << encoding::scheme_name(scheme) << ", " << tokens
            << " tokens\n";
  return 0;
}

// ---------------------------------------------------------------- stats

int run_stats(const std::vector<fs::path>& dirs, Manifest& man) {
  std::map<std::string, std::vector<double>> lengths, subtokens;
  for (const auto& dir : dirs) {
    if (!fs::is_directory(dir)) throw DataError("directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".json" && e.path().filename() != "split.json" && e.path().filename() != "run.json")
        files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto seq = encoding::token_sequence_from_json(read_json(f));
      const std::string s = encoding::scheme_name(seq.scheme);
      lengths[s].push_back(static_cast<double>(seq.size()));
      double present = 0;
      for (int x : seq.data) present += x >= 0;
      subtokens[s].push_back(present);
    }
  }
  if (lengths.empty()) throw DataError("no token files found");
  auto mean_std = [](const std::vector<double>& x) {
    double m = 0, s = 0;
    for (double v : x) m += v;
    m /= static_cast<double>(x.size());
    for (double v : x) s += (v - m) * (v - m);
    return std::pair{m, x.size() > 1 ? std::sqrt(s / static_cast<double>(x.size() - 1)) : 0.0};
  };
  std::printf("%-8s %8s %24s %24s\n", "scheme", "pieces", "token len", "sub-tokens");
  json out = json::object();
  for (const auto& [s, x] : lengths) {
    const auto [m, sd] = mean_std(x);
    const auto [ms, sds] = mean_std(subtokens[s]);
    char a[64], b[64];
    std::snprintf(a, sizeof a, "%.0f(±%.0f)", m, sd);
    std::snprintf(b, sizeof b, "%.0f(±%.0f)", ms, sds);
    std::printf("%-8s %8zu %24s %24s\n", s.c_str(), x.size(), a, b);
    out[s] = {{"pieces", x.size()}, {"token_len_mean", m}, {"token_len_std", sd}, {"subtokens_mean", ms},
              {"subtokens_std", sds}};
  }
  man.outputs = out;
  return 0;
}

// ---------------------------------------------------------------- run config

struct RunConfig {
  fs::path corpus, vocab, synth;
  std::string precision = "f32";
  encoding::Scheme scheme = encoding::Scheme::kNbPitchFirst;
  model::ModelConfig model;
  train::TrainConfig train;
  gen::SamplerConfig sampler;
  json raw;
};

fs::path resolve(const fs::path& base, const std::string& p) { return p.empty() ? fs::path{} : fs::absolute(base / p); }

RunConfig read_run_config(const fs::path& file, const std::string& scheme_flag, const std::string& kind_flag) {
  const json j = read_json(file);
  static const std::set<std::string> known{"data", "precision", "scheme", "model", "train", "sampler"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  RunConfig rc;
  rc.raw = j;
  const fs::path base = fs::absolute(file).parent_path();
  const json data = j.value("data", json::object());
  for (const auto& [k, v] : data.items())
    if (k != "corpus" && k != "vocab" && k != "synth") throw ConfigError("unknown config key 'data." + k + "'");
  rc.corpus = resolve(base, data.value("corpus", ""));
  rc.vocab = resolve(base, data.value("vocab", ""));
  rc.synth = resolve(base, data.value("synth", ""));
  if (rc.synth.empty() && (rc.corpus.empty() || rc.vocab.empty()))
    throw ConfigError("config needs data.corpus and data.vocab, or data.synth");
  rc.precision = j.value("precision", rc.precision);
  if (rc.precision != "f32" && rc.precision != "f64") throw ConfigError("precision must be f32 or f64");
  const std::string scheme = scheme_flag.empty() ? j.value("scheme", std::string("nb-pf")) : scheme_flag;
  rc.scheme = encoding::scheme_from_name(scheme);
  rc.model = model::model_config_from_json(j.value("model", json::object()));
  if (!kind_flag.empty()) rc.model.kind = model::kind_from_name(kind_flag);
  const json tj = j.value("train", json::object());
  if (!tj.contains("segment_length") && rc.scheme == encoding::Scheme::kRemi) rc.train.segment_length = 1024;
  rc.train = train::train_config_from_json(tj, rc.train);
  rc.sampler = gen::sampler_config_from_json(j.value("sampler", json::object()));
  return rc;
}

json run_config_json(const RunConfig& rc) {
  json data = json::object();
  if (!rc.synth.empty()) data["synth"] = rc.synth.string();
  if (!rc.corpus.empty()) data["corpus"] = rc.corpus.string();
  if (!rc.vocab.empty()) data["vocab"] = rc.vocab.string();
  return {{"data", data},
          {"precision", rc.precision},
          {"scheme", encoding::scheme_name(rc.scheme)},
          {"model", model::to_json(rc.model)},
          {"train", train::to_json(rc.train)},
          {"sampler", gen::to_json(rc.sampler)}};
}

// Synthetic corpora split by index: the last tenth is test, the tenth before it valid.
std::vector<std::vector<int>> synth_split(const synth::SynthCorpus& c, const std::string& split) {
  const std::size_t n = c.sequences.size(), held = std::max<std::size_t>(1, n / 10);
  if (n < 3) throw DataError("synthetic corpus needs at least 3 sequences");
  std::size_t lo = 0, hi = n - 2 * held;
  if (split == "valid") lo = n - 2 * held, hi = n - held;
  else if (split == "test") lo = n - held, hi = n;
  else if (split != "train") throw ConfigError("unknown split '" + split + "'");
  return {c.sequences.begin() + static_cast<long>(lo), c.sequences.begin() + static_cast<long>(hi)};
}

// ---------------------------------------------------------------- train

template <class T>
int train_typed(RunConfig rc, const fs::path& out, bool resume, Manifest& man) {
  std::unique_ptr<train::SegmentSource> train_set, valid_set;
  json vocab_json;
  if (!rc.synth.empty()) {
    const auto corpus = synth::synth_corpus_from_json(read_json(rc.synth));
    rc.model.vocab_sizes = corpus.vocab;
    rc.model.feature_names = corpus.feature_names();
    train_set = std::make_unique<train::FixedSource>(corpus.vocab.size(), synth_split(corpus, "train"));
    valid_set = std::make_unique<train::FixedSource>(corpus.vocab.size(), synth_split(corpus, "valid"));
    man.input(rc.synth);
  } else {
    const auto v = read_vocab(rc.vocab);
    vocab_json = encoding::to_json(v);
    const Corpus c = read_corpus(rc.corpus);
    std::tie(rc.model.vocab_sizes, rc.model.feature_names) = train::scheme_vocab(rc.scheme, v);
    train_set = std::make_unique<train::PieceSource>(load_pieces(rc.corpus, c.split.train, &v), v, rc.scheme);
    if (!c.split.valid.empty())
      valid_set = std::make_unique<train::PieceSource>(load_pieces(rc.corpus, c.split.valid, &v), v, rc.scheme);
    man.input(rc.corpus);
    man.input(rc.vocab);
  }
  rc.model.validate();
  rc.train.validate();
  man.config = run_config_json(rc);
  man.seed = rc.train.seed;
  fs::create_directories(out);
  write_json(out / "config.json", man.config);

  model::Model<T> m(rc.model, rc.train.seed);
  std::cerr << model::kind_name(rc.model.kind) << " model, " << m.parameter_count() << " parameters, "
            << encoding::scheme_name(rc.scheme) << "\n";
  const bool appending = resume && fs::exists(train::last_checkpoint(out)) && fs::exists(out / "loss.csv");
  std::ofstream csv(out / "loss.csv", appending ? std::ios::app : std::ios::trunc);
  if (!appending) csv << train::loss_csv_header(rc.model.feature_names) << "\n";
  train::TrainerOptions opt;
  opt.out_dir = out;
  opt.resume = resume;
  opt.metadata = {{"run", man.config}, {"vocab", vocab_json}, {"nmt_version", NMT_VERSION}};
  const auto t0 = std::chrono::steady_clock::now();
  opt.on_record = [&](const train::LossRecord& r) {
    csv << train::loss_csv_row(r) << "\n" << std::flush;
    if (r.split == "valid") {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "step %ld  valid %.4f  lr %.2e  (%.1fs)\n", r.step, r.mean_nll, r.lr, secs);
    }
  };
  const auto res = train::train_model(m, rc.train, *train_set, valid_set.get(), opt);
  man.outputs = {{"last_checkpoint", train::last_checkpoint(out).string()},
                 {"best_checkpoint", train::best_checkpoint(out).string()},
                 {"loss_csv", (out / "loss.csv").string()},
                 {"steps_done", res.steps_done},
                 {"best_valid", std::isfinite(res.best_valid) ? json(res.best_valid) : json(nullptr)},
                 {"best_step", res.best_step},
                 {"final_valid", std::isfinite(res.final_valid) ? json(res.final_valid) : json(nullptr)}};
  return 0;
}

int run_train(const fs::path& config, const std::string& scheme, const std::string& kind, const fs::path& out,
              bool resume, Manifest& man) {
  man.input(config);
  auto rc = read_run_config(config, scheme, kind);
  return rc.precision == "f64" ? train_typed<double>(rc, out, resume, man) : train_typed<float>(rc, out, resume, man);
}

// ---------------------------------------------------------------- checkpoint loading

struct Loaded {
  RunConfig rc;
  json metadata;
  std::string dtype;
};

Loaded inspect_checkpoint(const fs::path& ckpt) {
  if (!fs::exists(ckpt)) throw DataError("missing checkpoint: " + ckpt.string() + " (run `nmt train` first)");
  const json header = tensor::read_checkpoint_header(ckpt.string());
  Loaded l;
  l.dtype = header.at("dtype").get<std::string>();
  l.metadata = header.at("metadata");
  const json run = l.metadata.at("run");
  const json data = run.at("data");
  l.rc.corpus = data.value("corpus", "");
  l.rc.vocab = data.value("vocab", "");
  l.rc.synth = data.value("synth", "");
  l.rc.scheme = encoding::scheme_from_name(run.at("scheme").get<std::string>());
  l.rc.model = model::model_config_from_json(l.metadata.at("model"));
  l.rc.train = train::train_config_from_json(l.metadata.at("train"));
  l.rc.sampler = gen::sampler_config_from_json(run.value("sampler", json::object()));
  return l;
}

template <class T>
model::Model<T> load_model(const fs::path& ckpt, const Loaded& l) {
  model::Model<T> m(l.rc.model, l.rc.train.seed);
  auto params = m.parameters();
  tensor::load_checkpoint<T>(ckpt.string(), params);
  return m;
}

encoding::FeatureVocab checkpoint_vocab(const Loaded& l) {
  if (l.metadata.contains("vocab") && !l.metadata["vocab"].is_null()) return encoding::vocab_from_json(l.metadata["vocab"]);
  return read_vocab(l.rc.vocab);
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  fs::path ckpt, out;
  std::string scheme, split = "test";
  std::size_t window = 0, stride = 0;
};

template <class T>
int eval_typed(const EvalArgs& a, const Loaded& l, Manifest& man) {
  const auto m = load_model<T>(a.ckpt, l);
  const std::size_t window = a.window ? a.window : std::min(l.rc.train.segment_length, l.rc.model.max_sequence_length);
  const std::size_t stride = a.stride ? a.stride : std::max<std::size_t>(1, window / 2);
  man.config = {{"scheme", encoding::scheme_name(l.rc.scheme)}, {"split", a.split}, {"window", window}, {"stride", stride}};
  json report;
  std::string csv;
  if (!l.rc.synth.empty()) {
    const auto corpus = synth::synth_corpus_from_json(read_json(l.rc.synth));
    const auto seqs = synth_split(corpus, a.split);
    const std::size_t J = corpus.vocab.size();
    std::vector<double> sum(J, 0.0), cnt(J, 0.0);
    for (const auto& s : seqs) {
      const auto lp = eval::moving_window_nll(m, s, J, window, stride);
      for (std::size_t k = 0; k < lp.logp.size(); ++k)
        if (!std::isnan(lp.logp[k])) sum[k % J] -= lp.logp[k], cnt[k % J] += 1;
    }
    csv = "kind,name,nll,entropy\n";
    double mean = 0;
    report["features"] = json::object();
    for (std::size_t j = 0; j < J; ++j) {
      const double nll = sum[j] / cnt[j];
      mean += nll / static_cast<double>(J);
      report["features"]["f" + std::to_string(j)] = {{"nll", nll}, {"entropy", corpus.feature_entropy[j]}};
      csv += "feature,f" + std::to_string(j) + "," + std::to_string(nll) + "," + std::to_string(corpus.feature_entropy[j]) + "\n";
    }
    report["mean_over_features"] = mean;
    report["entropy"] = corpus.entropy;
    csv += "mean,over_features," + std::to_string(mean) + "," + std::to_string(corpus.entropy) + "\n";
    std::printf("mean NLL %.4f  (true entropy %.4f)\n", mean, corpus.entropy);
  } else {
    const auto v = checkpoint_vocab(l);
    const Corpus c = read_corpus(l.rc.corpus);
    std::vector<encoding::TokenSequence> seqs;
    for (const auto& id : split_ids(c, a.split)) seqs.push_back(encoding::encode(load_piece(l.rc.corpus, id, &v), v, l.rc.scheme));
    const eval::ModelScorer<T> scorer(m, l.rc.scheme, v, window, stride);
    const auto rep = eval::evaluate_corpus(scorer, seqs, v, window, stride);
    report = eval::to_json(rep);
    csv = eval::to_csv(rep);
    std::printf("%-12s %10s\n", "feature", "nll");
    for (std::size_t col = 0; col < rep.columns.size(); ++col)
      if (rep.count[col] > 0) std::printf("%-12s %10.4f\n", rep.columns[col].c_str(), rep.feature_nll(col));
    std::printf("%-12s %10.4f\n%-12s %10.4f\n", "mean/tokens", rep.mean_over_tokens(), "mean/features",
                rep.mean_over_features());
  }
  const fs::path out = a.out.empty() ? a.ckpt.parent_path() / ("eval_" + a.split) : a.out;
  write_json(out / "report.json", report);
  write_text(out / "report.csv", csv);
  man.outputs = {{"report_json", (out / "report.json").string()}, {"report_csv", (out / "report.csv").string()}};
  return 0;
}

int run_eval(const EvalArgs& a, Manifest& man) {
  const Loaded l = inspect_checkpoint(a.ckpt);
  man.input(a.ckpt);
  if (!a.scheme.empty() && encoding::scheme_from_name(a.scheme) != l.rc.scheme)
    throw ConfigError(std::string("--scheme ") + a.scheme + " differs from the checkpoint's scheme " +
                      encoding::scheme_name(l.rc.scheme));
  man.seed = l.rc.train.seed;
  return l.dtype == "f64" ? eval_typed<double>(a, l, man) : eval_typed<float>(a, l, man);
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  fs::path ckpt, prompt, out;
  int measures = 4;
  double top_p = 0.99, temperature = 1.1;
  std::size_t max_tokens = 0;
  std::uint64_t seed = 0;
};

template <class T>
int generate_typed(const GenerateArgs& a, const Loaded& l, Manifest& man) {
  if (!l.rc.synth.empty()) throw ConfigError("generate needs a model trained on a music corpus");
  const auto m = load_model<T>(a.ckpt, l);
  const auto v = checkpoint_vocab(l);
  gen::SamplerConfig sc;
  sc.top_p = a.top_p;
  sc.temperature = a.temperature;
  sc.seed = a.seed;
  sc.max_tokens = a.max_tokens ? a.max_tokens : l.rc.model.max_sequence_length;
  sc.validate();
  man.config = {{"sampler", gen::to_json(sc)}, {"measures", a.measures}, {"scheme", encoding::scheme_name(l.rc.scheme)}};
  man.seed = a.seed;

  auto piece = midi::quantize(midi::read_midi_file(a.prompt), v.resolution);
  if (v.features.chord) piece.chords = encoding::detect_chords(piece);
  const auto prompt = gen::extract_prompt(piece, v, l.rc.scheme, a.measures);
  const auto seq = gen::generate(m, v, prompt, sc);
  auto result = gen::trim_to_complete_measures(encoding::decode(seq, v));
  result.source_id = a.out.stem().string();
  midi::write_midi_file(result, a.out);
  fs::path dump = a.out;
  dump.replace_extension(".tokens.txt");
  write_text(dump, encoding::token_dump(seq, v));
  man.outputs = {{"midi", a.out.string()},
                 {"tokens", dump.string()},
                 {"prompt_tokens", prompt.size()},
                 {"generated_tokens", seq.size() - prompt.size()},
                 {"notes", result.notes.size()}};
  std::cout << "generated " << seq.size() - prompt.size() << " tokens after a " << prompt.size() << "-token prompt, "
            << result.notes.size() << " notes -> " << a.out.string() << "\n";
  return 0;
}

int run_generate(const GenerateArgs& a, Manifest& man) {
  const Loaded l = inspect_checkpoint(a.ckpt);
  man.input(a.ckpt);
  man.input(a.prompt);
  return l.dtype == "f64" ? generate_typed<double>(a, l, man) : generate_typed<float>(a, l, man);
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::size_t features = 4, sequences = 200, length = 64;
  std::vector<int> vocab{16};
  std::string deps = "independent";
  std::uint64_t seed = 0;
  fs::path out;
};

int run_synth(const SynthArgs& a, Manifest& man) {
  std::vector<int> vocab = a.vocab;
  if (vocab.size() == 1) vocab.assign(a.features, vocab.front());
  if (vocab.size() != a.features) throw ConfigError("--vocab takes one size or one per feature");
  const auto c = synth::synth_corpus(vocab, synth::dependency_from_name(a.deps), a.sequences, a.length, a.seed);
  write_json(a.out, synth::to_json(c));
  man.config = {{"features", a.features}, {"vocab", vocab}, {"deps", a.deps}, {"sequences", a.sequences}, {"length", a.length}};
  man.seed = a.seed;
  man.outputs = {{"corpus", a.out.string()}, {"feature_entropy", c.feature_entropy}, {"entropy", c.entropy}};
  std::printf("%zu sequences x %zu tokens, entropy per sub-token %.6f nats\n", a.sequences, a.length, c.entropy);
  for (std::size_t j = 0; j < c.feature_entropy.size(); ++j) std::printf("  f%zu  %.6f\n", j, c.feature_entropy[j]);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nested music transformer toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", NMT_VERSION);
  Manifest man;
  for (int i = 0; i < argc; ++i) man.argv.emplace_back(argv[i]);
  fs::path manifest_path;

  IngestArgs ia;
  auto* ingest = app.add_subcommand("ingest", "Parse, quantize, filter and split a MIDI directory");
  ingest->add_option("--in", ia.in, "Directory searched recursively for .mid files")->required();
  ingest->add_option("--out", ia.out, "Corpus directory to create")->required();
  ingest->add_option("--resolution", ia.resolution, "Grid units per quarter note")->capture_default_str();
  ingest->add_option("--min-instruments", ia.min_instruments, "Minimum distinct instruments")->capture_default_str();
  ingest->add_option("--min-notes", ia.min_notes)->capture_default_str();
  ingest->add_option("--max-notes", ia.max_notes)->capture_default_str();
  ingest->add_option("--seed", ia.seed, "Split seed")->capture_default_str();

  fs::path vin, vout;
  encoding::FeatureConfig fc;
  bool no_inst = false, no_chord = false, no_tempo = false, no_vel = false;
  auto* vocab = app.add_subcommand("vocab", "Build the feature vocabulary of an ingested corpus");
  vocab->add_option("--in", vin, "Ingested corpus directory")->required();
  vocab->add_option("--out", vout, "Vocabulary JSON file")->required();
  vocab->add_flag("--no-instrument", no_inst);
  vocab->add_flag("--no-chord", no_chord);
  vocab->add_flag("--no-tempo", no_tempo);
  vocab->add_flag("--no-velocity", no_vel);

  std::string escheme;
  fs::path evocab, ein, eout;
  bool edump = false;
  auto* encode = app.add_subcommand("encode", "Encode an ingested corpus");
  encode->add_option("--scheme", escheme, "remi, cp, nb-mf or nb-pf")->required();
  encode->add_option("--vocab", evocab)->required();
  encode->add_option("--in", ein)->required();
  encode->add_option("--out", eout)->required();
  encode->add_flag("--dump", edump, "Also write a token dump per piece");

  std::vector<fs::path> sin;
  auto* stats = app.add_subcommand("stats", "Token length statistics of encoded corpora");
  stats->add_option("--in", sin, "One or more encoded directories")->required();

  fs::path tconfig, tout;
  std::string tscheme, tkind;
  bool tresume = false;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", tconfig)->required();
  train->add_option("--scheme", tscheme, "Overrides the config's scheme");
  train->add_option("--subdecoder", tkind, "parallel, ff, rnn, selfattn, crossattn or nmt");
  train->add_option("--out", tout)->required();
  train->add_flag("--resume", tresume, "Continue from OUT/last.ckpt");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Cross-encoding NLL of a checkpoint");
  eval->add_option("--model", ea.ckpt)->required();
  eval->add_option("--scheme", ea.scheme, "Must match the checkpoint");
  eval->add_option("--split", ea.split)->capture_default_str();
  eval->add_option("--window", ea.window, "Default: training segment length");
  eval->add_option("--stride", ea.stride, "Default: window / 2");
  eval->add_option("--out", ea.out, "Report directory");

  GenerateArgs ga;
  auto* generate = app.add_subcommand("generate", "Continue a MIDI prompt");
  generate->add_option("--model", ga.ckpt)->required();
  generate->add_option("--prompt", ga.prompt)->required();
  generate->add_option("--measures", ga.measures)->capture_default_str();
  generate->add_option("--top-p", ga.top_p)->capture_default_str();
  generate->add_option("--temperature", ga.temperature)->capture_default_str();
  generate->add_option("--max-tokens", ga.max_tokens, "Default: model max_sequence_length");
  generate->add_option("--seed", ga.seed)->capture_default_str();
  generate->add_option("--out", ga.out)->required();

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Synthetic compound-token corpus with exact entropy");
  synth->add_option("--features", sa.features)->capture_default_str();
  synth->add_option("--vocab", sa.vocab, "One size for all features or one per feature")->capture_default_str();
  synth->add_option("--deps", sa.deps, "independent, intra or inter")->capture_default_str();
  synth->add_option("--sequences", sa.sequences)->capture_default_str();
  synth->add_option("--length", sa.length, "Tokens per sequence")->capture_default_str();
  synth->add_option("--seed", sa.seed)->capture_default_str();
  synth->add_option("--out", sa.out)->required();

  app.add_option("--manifest", manifest_path, "Where to write the run manifest (default: next to the outputs)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    int rc = 0;
    fs::path default_manifest;
    if (*ingest) {
      man.command = "ingest";
      man.input(ia.in);
      man.seed = ia.seed;
      rc = run_ingest(ia, man);
      default_manifest = ia.out / "run.json";
    } else if (*vocab) {
      man.command = "vocab";
      man.input(vin);
      fc = {!no_inst, !no_chord, !no_tempo, !no_vel};
      rc = run_vocab(vin, vout, fc, man);
      default_manifest = vout.parent_path() / (vout.stem().string() + ".run.json");
    } else if (*encode) {
      man.command = "encode";
      man.input(ein);
      man.input(evocab);
      rc = run_encode(encoding::scheme_from_name(escheme), evocab, ein, eout, edump, man);
      default_manifest = eout / "run.json";
    } else if (*stats) {
      man.command = "stats";
      for (const auto& d : sin) man.input(d);
      rc = run_stats(sin, man);
    } else if (*train) {
      man.command = "train";
      rc = run_train(tconfig, tscheme, tkind, tout, tresume, man);
      default_manifest = tout / "run.json";
    } else if (*eval) {
      man.command = "eval";
      rc = run_eval(ea, man);
      default_manifest = (ea.out.empty() ? ea.ckpt.parent_path() / ("eval_" + ea.split) : ea.out) / "run.json";
    } else if (*generate) {
      man.command = "generate";
      rc = run_generate(ga, man);
      default_manifest = ga.out.parent_path() / (ga.out.stem().string() + ".run.json");
    } else if (*synth) {
      man.command = "synth";
      rc = run_synth(sa, man);
      default_manifest = sa.out.parent_path() / (sa.out.stem().string() + ".run.json");
    }
    const fs::path mp = manifest_path.empty() ? default_manifest : manifest_path;
    if (!mp.empty()) man.write(mp);
    return rc;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 4;
  }
}

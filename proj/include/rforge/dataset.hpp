#pragma once

// On-disk phantom dataset: case_NNNN.rvol, case_NNNN.truth.rvol and a
// manifest.tsv with columns index, label, split, volume, truth.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rforge/error.hpp"
#include "rforge/phantom.hpp"
#include "rforge/training.hpp"
#include "rforge/volume.hpp"

namespace rforge {

struct ManifestRow {
  std::uint32_t index = 0;
  int label = 0;
  SplitPart part = SplitPart::kTrain;
  std::string volume;
  std::string truth;
};

inline constexpr const char* kManifestHeader = "index\tlabel\tsplit\tvolume\ttruth";

inline std::string case_stem(std::uint32_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%04u", index);
  return buf;
}

inline SplitPart parse_split_part(const std::string& s) {
  if (s == "train") return SplitPart::kTrain;
  if (s == "val") return SplitPart::kVal;
  if (s == "test") return SplitPart::kTest;
  throw FormatError("unknown split '" + s + "'");
}

inline std::vector<ManifestRow> write_dataset(const std::vector<PhantomCase>& cases, const DatasetSplit& split,
                                              const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestRow> rows;
  for (std::uint32_t i = 0; i < cases.size(); ++i) {
    ManifestRow r{i, cases[i].label, split.part_of.at(i), case_stem(i) + ".rvol", case_stem(i) + ".truth.rvol"};
    write_volume(cases[i].volume, dir / r.volume);
    write_volume(cases[i].truth.to_volume(), dir / r.truth);
    rows.push_back(r);
  }
  std::ofstream os(dir / "manifest.tsv");
  os << kManifestHeader << "\n";
  for (const auto& r : rows)
    os << r.index << '\t' << r.label << '\t' << to_string(r.part) << '\t' << r.volume << '\t' << r.truth << "\n";
  if (!os) throw FormatError("failed writing " + (dir / "manifest.tsv").string());
  return rows;
}

inline std::vector<ManifestRow> read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.tsv";
  std::ifstream is(path);
  if (!is) throw MissingInputError("no dataset manifest at " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kManifestHeader)
    throw FormatError(path.string() + ": unexpected header");
  std::vector<ManifestRow> rows;
  for (int n = 2; std::getline(is, line); ++n) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestRow r;
    std::string part;
    if (!(ls >> r.index >> r.label >> part >> r.volume >> r.truth) || (r.label != 0 && r.label != 1))
      throw FormatError(path.string() + ":" + std::to_string(n) + ": malformed row");
    r.part = parse_split_part(part);
    rows.push_back(r);
  }
  if (rows.empty()) throw FormatError(path.string() + ": no cases");
  return rows;
}

// One split of a dataset, preprocessed to `dims`.
struct LoadedSplit {
  std::vector<std::uint32_t> index;
  std::vector<Volume> volumes;
  std::vector<int> labels;
  std::vector<BinaryMask> truths;

  std::vector<Sample> samples() const {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < volumes.size(); ++i) out.push_back({&volumes[i], labels[i]});
    return out;
  }
};

inline LoadedSplit load_split(const std::filesystem::path& dir, SplitPart part, const Dims& dims,
                              bool with_truth = false) {
  LoadedSplit s;
  for (const auto& r : read_manifest(dir)) {
    if (r.part != part) continue;
    s.index.push_back(r.index);
    s.volumes.push_back(preprocess(read_volume(dir / r.volume), dims));
    s.labels.push_back(r.label);
    if (with_truth) {
      const Volume t = read_volume(dir / r.truth);
      s.truths.push_back(BinaryMask::from_volume(center_crop(t, dims)));
    }
  }
  if (s.volumes.empty()) throw MissingInputError(std::string("dataset has no '") + to_string(part) + "' cases");
  return s;
}

}  // namespace rforge

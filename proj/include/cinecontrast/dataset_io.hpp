// Dataset directory serialization: manifest.json (ids, phenotypes, splits,
// seeds), one flat binary video file per (study, view, slice) with a "CINE"
// header, and one UTF-8 report text file per study. Round-trips must be
// byte-exact.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cinecontrast/synthdata.hpp"
#include "cinecontrast/tensor.hpp"

namespace cinecontrast::synth {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct SplitSpec {
    std::vector<std::string> train, val, test;

    void validate_disjoint() const {
        std::map<std::string, int> seen;
        for (const auto& id : train) seen[id] |= 1;
        for (const auto& id : val) seen[id] |= 2;
        for (const auto& id : test) seen[id] |= 4;
        for (const auto& [id, mask] : seen) {
            if (mask != 1 && mask != 2 && mask != 4) {
                throw ContractViolation("splits are not disjoint at study " + id);
            }
        }
    }
};

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

inline float read_f32(std::istream& in) {
    const std::uint32_t bits = read_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

// Flat little-endian fp32 video file: magic "CINE", u32 dims C,T,H,W, data.
inline void write_cine(const fs::path& path, const Tensor<float>& video) {
    if (video.rank() != 4) throw ContractViolation("write_cine: need [C,T,H,W]");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_cine: cannot open " + path.string());
    out.write("CINE", 4);
    for (int d = 0; d < 4; ++d) detail::write_u32(out, static_cast<std::uint32_t>(video.dim(d)));
    for (float v : video.data) detail::write_f32(out, v);
    if (!out) throw IoError("write_cine: short write to " + path.string());
}

inline Tensor<float> read_cine(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_cine: cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "CINE", 4) != 0) {
        throw IoError("read_cine: bad magic in " + path.string());
    }
    Shape shape(4);
    for (int d = 0; d < 4; ++d) shape[static_cast<std::size_t>(d)] = static_cast<int>(detail::read_u32(in));
    Tensor<float> video(shape);
    for (auto& v : video.data) v = detail::read_f32(in);
    if (!in) throw IoError("read_cine: short read from " + path.string());
    return video;
}

inline json phenotype_to_json(const Phenotype& ph) {
    json j;
    j["ef"] = ph.ef;
    j["wall_thickness"] = ph.wall_thickness;
    j["chamber_scale"] = ph.chamber_scale;
    j["heart_rate_cycles"] = ph.heart_rate_cycles;
    j["flags"] = ph.flags;
    return j;
}

inline Phenotype phenotype_from_json(const json& j) {
    Phenotype ph;
    ph.ef = j.at("ef").get<double>();
    ph.wall_thickness = j.at("wall_thickness").get<double>();
    ph.chamber_scale = j.at("chamber_scale").get<double>();
    ph.heart_rate_cycles = j.at("heart_rate_cycles").get<double>();
    ph.flags = j.at("flags").get<std::map<std::string, bool>>();
    return ph;
}

inline std::string video_file_name(const std::string& study_id, ViewTag view, int slice) {
    return study_id + "_" + view_tag_name(view) + std::to_string(slice) + ".cine";
}

struct Dataset {
    std::vector<Study> studies;
    SplitSpec splits;
    std::map<std::string, double> prevalence;
    std::uint64_t seed = 0;

    const Study& study_by_id(const std::string& id) const {
        for (const auto& s : studies) {
            if (s.study_id == id) return s;
        }
        throw ContractViolation("dataset: unknown study id " + id);
    }
};

inline void write_dataset(const fs::path& dir, const Dataset& ds) {
    fs::create_directories(dir / "videos");
    fs::create_directories(dir / "reports");

    json manifest;
    manifest["format_version"] = 1;
    manifest["seed"] = ds.seed;
    manifest["n"] = ds.studies.size();
    manifest["prevalence"] = ds.prevalence;
    manifest["splits"]["train"] = ds.splits.train;
    manifest["splits"]["val"] = ds.splits.val;
    manifest["splits"]["test"] = ds.splits.test;

    json entries = json::array();
    for (const auto& s : ds.studies) {
        json e;
        e["study_id"] = s.study_id;
        e["phenotype"] = phenotype_to_json(s.phenotype);
        e["report_file"] = "reports/" + s.study_id + ".txt";
        json vids = json::array();
        for (const auto& v : s.videos) {
            json jv;
            jv["view"] = view_tag_name(v.view);
            jv["slice"] = v.slice;
            jv["file"] = "videos/" + video_file_name(s.study_id, v.view, v.slice);
            vids.push_back(jv);
            write_cine(dir / "videos" / video_file_name(s.study_id, v.view, v.slice), v.video);
        }
        e["videos"] = vids;
        entries.push_back(e);

        std::ofstream rep(dir / "reports" / (s.study_id + ".txt"), std::ios::binary);
        if (!rep) throw IoError("write_dataset: cannot write report for " + s.study_id);
        for (const auto& sentence : s.report) rep << sentence << "\n";
    }
    manifest["studies"] = entries;

    std::ofstream mf(dir / "manifest.json", std::ios::binary);
    if (!mf) throw IoError("write_dataset: cannot write manifest.json");
    mf << manifest.dump(2) << "\n";
}

inline Dataset load_dataset(const fs::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw IoError("load_dataset: missing manifest.json in " + dir.string());
    json manifest = json::parse(mf);
    if (manifest.at("format_version").get<int>() != 1) {
        throw IoError("load_dataset: unknown format_version");
    }

    Dataset ds;
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.prevalence = manifest.at("prevalence").get<std::map<std::string, double>>();
    ds.splits.train = manifest.at("splits").at("train").get<std::vector<std::string>>();
    ds.splits.val = manifest.at("splits").at("val").get<std::vector<std::string>>();
    ds.splits.test = manifest.at("splits").at("test").get<std::vector<std::string>>();

    for (const auto& e : manifest.at("studies")) {
        Study s;
        s.study_id = e.at("study_id").get<std::string>();
        s.phenotype = phenotype_from_json(e.at("phenotype"));
        std::ifstream rep(dir / e.at("report_file").get<std::string>());
        if (!rep) throw IoError("load_dataset: missing report for " + s.study_id);
        std::string line;
        while (std::getline(rep, line)) {
            if (!line.empty()) s.report.push_back(line);
        }
        for (const auto& jv : e.at("videos")) {
            VideoRecord v;
            v.view = view_tag_from_name(jv.at("view").get<std::string>());
            v.slice = jv.at("slice").get<int>();
            v.video = read_cine(dir / jv.at("file").get<std::string>());
            s.videos.push_back(std::move(v));
        }
        ds.studies.push_back(std::move(s));
    }
    return ds;
}

// Study-level split by seeded shuffle; fractions are (train, val) with the
// remainder becoming test.
inline SplitSpec make_splits(const std::vector<Study>& studies, double train_frac,
                             double val_frac, std::uint64_t seed) {
    if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0) {
        throw ContractViolation("make_splits: bad fractions");
    }
    std::vector<std::string> ids;
    ids.reserve(studies.size());
    for (const auto& s : studies) ids.push_back(s.study_id);
    Rng rng(Rng::next_hash(seed, 0x5eedful));
    rng.shuffle(ids);
    SplitSpec sp;
    const auto n = ids.size();
    const auto n_train = static_cast<std::size_t>(train_frac * static_cast<double>(n));
    const auto n_val = static_cast<std::size_t>(val_frac * static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_train) {
            sp.train.push_back(ids[i]);
        } else if (i < n_train + n_val) {
            sp.val.push_back(ids[i]);
        } else {
            sp.test.push_back(ids[i]);
        }
    }
    return sp;
}

}  // namespace cinecontrast::synth

// Synthetic cine-study generator: pulsating-annulus phantom videos paired
// with template-grammar reports and ground-truth labels, plus the tokenizer
// and the temporally consistent augmentation pipeline.
//
// The phantom's ejection-fraction analog is 1 - min_area/max_area of the
// cavity across frames. Rendered radii are normalized against the realized
// min/max of the pulse curve, so the continuous-area ratio matches the
// requested ef exactly and only pixel discretization remains.
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "cinecontrast/rng.hpp"
#include "cinecontrast/tensor.hpp"

namespace cinecontrast::synth {

constexpr double kPi = 3.14159265358979323846;

enum class ViewTag { kTwoChamber, kThreeChamber, kFourChamber, kShortAxis };

inline const char* view_tag_name(ViewTag v) {
    switch (v) {
        case ViewTag::kTwoChamber: return "2CH";
        case ViewTag::kThreeChamber: return "3CH";
        case ViewTag::kFourChamber: return "4CH";
        case ViewTag::kShortAxis: return "SAX";
    }
    return "?";
}

inline ViewTag view_tag_from_name(const std::string& s) {
    if (s == "2CH") return ViewTag::kTwoChamber;
    if (s == "3CH") return ViewTag::kThreeChamber;
    if (s == "4CH") return ViewTag::kFourChamber;
    if (s == "SAX") return ViewTag::kShortAxis;
    throw ContractViolation("unknown view tag: " + s);
}

// Flag thresholds tying the boolean labels to the continuous fields.
constexpr double kLowEfThreshold = 0.40;       // ef below this => "low_ef"
constexpr double kHypertrophyWallPx = 3.2;     // wall thickness above => "hypertrophy"
constexpr double kDilationScale = 1.10;        // chamber scale above => "dilation"

struct Phenotype {
    double ef = 0.6;                 // in [0.05, 0.85]
    double wall_thickness = 2.5;     // pixels
    double chamber_scale = 1.0;
    double heart_rate_cycles = 1.0;  // pulse cycles per clip
    std::map<std::string, bool> flags;

    void derive_flags() {
        flags["low_ef"] = ef < kLowEfThreshold;
        flags["hypertrophy"] = wall_thickness > kHypertrophyWallPx;
        flags["dilation"] = chamber_scale > kDilationScale;
    }

    void validate() const {
        if (ef < 0.05 || ef > 0.85) throw ContractViolation("phenotype: ef out of [0.05, 0.85]");
        if (wall_thickness <= 0 || chamber_scale <= 0 || heart_rate_cycles <= 0) {
            throw ContractViolation("phenotype: fields must be positive");
        }
    }
};

struct VideoRecord {
    ViewTag view = ViewTag::kShortAxis;
    int slice = 0;  // SAX stack index; 0 for long-axis views
    Tensor<float> video;  // [1, T, H, W] in [0,1]
};

struct Study {
    std::string study_id;
    std::vector<VideoRecord> videos;
    std::vector<std::string> report;  // ordered sentences
    Phenotype phenotype;
};

struct GenConfig {
    int frames = 16;
    int height = 32;
    int width = 32;
    double noise_sigma = 0.03;
    int sax_slices = 2;
    // rendering intensities
    double cavity_intensity = 0.90;
    double wall_intensity = 0.35;
    double background_intensity = 0.08;
};

namespace detail {

struct ViewGeometry {
    double elongation;   // semi-major / semi-minor; 1 for SAX
    double base_radius;  // semi-minor before chamber scale and pulse
    double angle_deg;
};

inline ViewGeometry view_geometry(ViewTag view, int slice) {
    switch (view) {
        case ViewTag::kTwoChamber: return {1.60, 5.5, 90.0};
        case ViewTag::kThreeChamber: return {1.45, 5.5, 30.0};
        case ViewTag::kFourChamber: return {1.30, 5.5, 150.0};
        case ViewTag::kShortAxis:
        default:
            // stack tapers toward the apex
            return {1.0, slice == 0 ? 8.0 : 6.4, 0.0};
    }
}

// Per-frame radius factors in [sqrt(1-ef), 1], normalized so the realized
// min/max hit the bounds exactly regardless of cycle count and frame grid.
inline std::vector<double> pulse_factors(double ef, double cycles, int frames) {
    std::vector<double> s(static_cast<std::size_t>(frames));
    double lo = 1e300, hi = -1e300;
    for (int i = 0; i < frames; ++i) {
        const double phase = 2.0 * kPi * cycles * static_cast<double>(i) / frames;
        s[static_cast<std::size_t>(i)] = 0.5 + 0.5 * std::cos(phase);
        lo = std::min(lo, s[static_cast<std::size_t>(i)]);
        hi = std::max(hi, s[static_cast<std::size_t>(i)]);
    }
    const double rho = std::sqrt(1.0 - ef);
    const double span = hi - lo;
    for (auto& v : s) {
        const double norm = span > 1e-12 ? (v - lo) / span : 1.0;
        v = rho + (1.0 - rho) * norm;
    }
    return s;
}

}  // namespace detail

inline std::vector<std::string> make_report(const Phenotype& ph, Rng& rng);

// Render one study: each view is an elliptical (or circular, for SAX)
// bright cavity inside a dimmer wall annulus over dark background, with the
// cavity pulsing so that 1 - min_area/max_area equals the phenotype ef.
inline Study generate_study(const Phenotype& phenotype_in,
                            const std::vector<std::pair<ViewTag, int>>& views, std::uint64_t seed,
                            const GenConfig& cfg = {}) {
    Phenotype phenotype = phenotype_in;
    phenotype.validate();
    phenotype.derive_flags();
    if (views.empty()) throw ContractViolation("generate_study: views must be non-empty");

    Study study;
    study.phenotype = phenotype;
    Rng root(seed);
    Rng render_rng = root.split(1);
    Rng report_rng = root.split(2);

    const double cx = (cfg.width - 1) * 0.5 + render_rng.uniform(-1.0, 1.0);
    const double cy = (cfg.height - 1) * 0.5 + render_rng.uniform(-1.0, 1.0);
    const auto factors =
        detail::pulse_factors(phenotype.ef, phenotype.heart_rate_cycles, cfg.frames);

    for (const auto& [view, slice] : views) {
        const auto geom = detail::view_geometry(view, slice);
        Tensor<float> video(Shape{1, cfg.frames, cfg.height, cfg.width});
        const double theta = geom.angle_deg * kPi / 180.0;
        const double ct = std::cos(theta), st = std::sin(theta);
        for (int f = 0; f < cfg.frames; ++f) {
            const double b = geom.base_radius * phenotype.chamber_scale *
                             factors[static_cast<std::size_t>(f)];
            const double a = b * geom.elongation;
            const double bw = b + phenotype.wall_thickness;
            const double aw = a + phenotype.wall_thickness;
            float* frame = video.data.data() +
                           static_cast<std::size_t>(f) * cfg.height * cfg.width;
            for (int y = 0; y < cfg.height; ++y) {
                for (int x = 0; x < cfg.width; ++x) {
                    const double dx = x - cx, dy = y - cy;
                    const double u = dx * ct + dy * st;
                    const double v = -dx * st + dy * ct;
                    // approximate signed distance in pixels via the scaled
                    // radial coordinate; exact enough for a 1 px edge ramp
                    const double rc = std::sqrt((u / a) * (u / a) + (v / b) * (v / b));
                    const double d_cav = (rc - 1.0) * b;
                    const double rw = std::sqrt((u / aw) * (u / aw) + (v / bw) * (v / bw));
                    const double d_wall = (rw - 1.0) * bw;
                    const double cov_cav = std::clamp(0.5 - d_cav, 0.0, 1.0);
                    const double cov_wall = std::clamp(0.5 - d_wall, 0.0, 1.0) - cov_cav;
                    double val = cfg.cavity_intensity * cov_cav +
                                 cfg.wall_intensity * cov_wall +
                                 cfg.background_intensity * (1.0 - cov_cav - cov_wall);
                    if (cfg.noise_sigma > 0.0) val += render_rng.normal(0.0, cfg.noise_sigma);
                    frame[static_cast<std::size_t>(y) * cfg.width + x] =
                        static_cast<float>(std::clamp(val, 0.0, 1.0));
                }
            }
        }
        study.videos.push_back(VideoRecord{view, slice, std::move(video)});
    }

    study.report = make_report(phenotype, report_rng);
    return study;
}

// ---------------------------------------------------------------------------
// report grammar
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& digit_words() {
    static const std::vector<std::string> kDigits{"zero", "one", "two",   "three", "four",
                                                  "five", "six", "seven", "eight", "nine"};
    return kDigits;
}

inline const std::vector<std::string>& distractor_sentences() {
    static const std::vector<std::string> kPool{
        "image quality is adequate",
        "the patient was in sinus rhythm",
        "no prior studies are available for comparison",
        "there is no pericardial effusion",
        "the aortic root is unremarkable",
    };
    return kPool;
}

// Template-grammar report: one quantitative ef sentence, one qualitative ef
// sentence, one wall sentence, one chamber-size sentence, plus distractors.
// Flags are recoverable exactly from the qualitative keywords.
inline std::vector<std::string> make_report(const Phenotype& ph, Rng& rng) {
    std::vector<std::string> sentences;
    const int percent = static_cast<int>(std::lround(ph.ef * 100.0));
    sentences.push_back("the ejection fraction is measured at " +
                        digit_words()[static_cast<std::size_t>(percent / 10)] + " " +
                        digit_words()[static_cast<std::size_t>(percent % 10)] + " percent");
    if (ph.ef < kLowEfThreshold) {
        sentences.push_back("systolic function is severely reduced");
    } else if (ph.ef < 0.55) {
        sentences.push_back("systolic function is mildly reduced");
    } else {
        sentences.push_back("systolic function is normal");
    }
    sentences.push_back(ph.flags.at("hypertrophy") ? "the myocardial walls are thickened"
                                                   : "wall thickness is within normal limits");
    sentences.push_back(ph.flags.at("dilation") ? "the chamber is dilated"
                                                : "chamber size is normal");

    // 2-3 distractors without replacement
    std::vector<std::string> pool = distractor_sentences();
    rng.shuffle(pool);
    const int extra = 2 + rng.below_int(2);
    for (int i = 0; i < extra; ++i) sentences.push_back(pool[static_cast<std::size_t>(i)]);

    rng.shuffle(sentences);
    return sentences;
}

// Rule-based reader over the grammar keywords; exact on generated reports.
inline std::map<std::string, bool> read_flags_from_report(
    const std::vector<std::string>& report) {
    std::map<std::string, bool> flags{{"low_ef", false}, {"hypertrophy", false},
                                      {"dilation", false}};
    for (const auto& s : report) {
        if (s.find("severely") != std::string::npos) flags["low_ef"] = true;
        if (s.find("thickened") != std::string::npos) flags["hypertrophy"] = true;
        if (s.find("dilated") != std::string::npos) flags["dilation"] = true;
    }
    return flags;
}

// ---------------------------------------------------------------------------
// population sampling
// ---------------------------------------------------------------------------

inline std::map<std::string, double> default_prevalence() {
    return {{"low_ef", 0.30}, {"hypertrophy", 0.25}, {"dilation", 0.25}};
}

inline std::vector<std::pair<ViewTag, int>> default_views(const GenConfig& cfg = {}) {
    std::vector<std::pair<ViewTag, int>> v{{ViewTag::kTwoChamber, 0},
                                           {ViewTag::kThreeChamber, 0},
                                           {ViewTag::kFourChamber, 0}};
    for (int s = 0; s < cfg.sax_slices; ++s) v.emplace_back(ViewTag::kShortAxis, s);
    return v;
}

// Draw flags from the prevalence map, then continuous fields from ranges
// conditioned on each flag so labels and fields stay threshold-consistent.
inline Phenotype sample_phenotype(Rng& rng, const std::map<std::string, double>& prevalence) {
    auto prev = [&](const char* key, double fallback) {
        auto it = prevalence.find(key);
        return it == prevalence.end() ? fallback : it->second;
    };
    for (const auto& [key, p] : prevalence) {
        if (p < 0.0 || p > 1.0) throw ContractViolation("prevalence out of [0,1] for " + key);
        if (key != "low_ef" && key != "hypertrophy" && key != "dilation") {
            throw ContractViolation("unknown prevalence key: " + key);
        }
    }
    Phenotype ph;
    const bool low_ef = rng.bernoulli(prev("low_ef", 0.30));
    const bool hyper = rng.bernoulli(prev("hypertrophy", 0.25));
    const bool dilated = rng.bernoulli(prev("dilation", 0.25));
    ph.ef = low_ef ? rng.uniform(0.08, 0.38) : rng.uniform(0.44, 0.80);
    ph.wall_thickness = hyper ? rng.uniform(3.6, 4.5) : rng.uniform(2.0, 2.9);
    ph.chamber_scale = dilated ? rng.uniform(1.13, 1.22) : rng.uniform(0.88, 1.07);
    ph.heart_rate_cycles = rng.uniform(1.0, 2.5);
    ph.derive_flags();
    return ph;
}

inline std::vector<Study> sample_population(int n, std::uint64_t seed,
                                            const std::map<std::string, double>& prevalence,
                                            const GenConfig& cfg = {}) {
    if (n < 0) throw ContractViolation("sample_population: n must be non-negative");
    std::vector<Study> studies;
    studies.reserve(static_cast<std::size_t>(n));
    Rng root(seed);
    for (int i = 0; i < n; ++i) {
        Rng study_rng = root.split(static_cast<std::uint64_t>(i));
        Phenotype ph = sample_phenotype(study_rng, prevalence);
        const std::uint64_t study_seed = study_rng.next_u64();
        Study s = generate_study(ph, default_views(cfg), study_seed, cfg);
        char buf[16];
        std::snprintf(buf, sizeof(buf), "s%05d", i);
        s.study_id = buf;
        studies.push_back(std::move(s));
    }
    return studies;
}

// ---------------------------------------------------------------------------
// area oracle
// ---------------------------------------------------------------------------

// Coverage-weighted cavity area of one frame: interior pixels count 1, edge
// pixels fractionally, wall and background 0.
inline double cavity_area(const float* frame, int height, int width, const GenConfig& cfg = {}) {
    const double lo = cfg.wall_intensity, hi = cfg.cavity_intensity;
    double area = 0.0;
    for (int i = 0; i < height * width; ++i) {
        area += std::clamp((static_cast<double>(frame[i]) - lo) / (hi - lo), 0.0, 1.0);
    }
    return area;
}

// ef estimate from a rendered (ideally un-noised) video: 1 - min/max area.
inline double estimate_ef_from_video(const Tensor<float>& video, const GenConfig& cfg = {}) {
    if (video.rank() != 4) throw ContractViolation("estimate_ef_from_video: need [C,T,H,W]");
    const int T = video.dim(1), H = video.dim(2), W = video.dim(3);
    double lo = 1e300, hi = 0.0;
    for (int f = 0; f < T; ++f) {
        const double a =
            cavity_area(video.data.data() + static_cast<std::size_t>(f) * H * W, H, W, cfg);
        lo = std::min(lo, a);
        hi = std::max(hi, a);
    }
    if (hi <= 0.0) return 0.0;
    return 1.0 - lo / hi;
}

// ---------------------------------------------------------------------------
// temporally consistent augmentation
// ---------------------------------------------------------------------------

struct AugmentPolicy {
    double max_rotate_deg = 15.0;
    double scale_min = 0.85, scale_max = 1.15;
    double max_translate_frac = 0.10;
    double max_shear_deg = 8.0;
    double gain_min = 0.90, gain_max = 1.10;

    static AugmentPolicy none() {
        AugmentPolicy p;
        p.max_rotate_deg = 0.0;
        p.scale_min = p.scale_max = 1.0;
        p.max_translate_frac = 0.0;
        p.max_shear_deg = 0.0;
        p.gain_min = p.gain_max = 1.0;
        return p;
    }

    bool is_identity() const {
        return max_rotate_deg == 0.0 && scale_min == 1.0 && scale_max == 1.0 &&
               max_translate_frac == 0.0 && max_shear_deg == 0.0 && gain_min == 1.0 &&
               gain_max == 1.0;
    }
};

// One affine transform plus intensity gain, applied identically to every
// frame of a clip. Matrix maps output pixel -> input pixel (inverse form).
struct AffineParams {
    double inv[6] = {1, 0, 0, 0, 1, 0};  // row-major 2x3 [a b c; d e f]
    double gain = 1.0;
    bool identity = true;
};

inline AffineParams sample_affine(const AugmentPolicy& policy, Rng& rng, int height, int width) {
    AffineParams p;
    p.gain = rng.uniform(policy.gain_min, policy.gain_max);
    if (policy.is_identity()) return p;
    const double rot = rng.uniform(-policy.max_rotate_deg, policy.max_rotate_deg) * kPi / 180.0;
    const double sc = rng.uniform(policy.scale_min, policy.scale_max);
    const double sh = std::tan(rng.uniform(-policy.max_shear_deg, policy.max_shear_deg) *
                               kPi / 180.0);
    const double tx = rng.uniform(-policy.max_translate_frac, policy.max_translate_frac) * width;
    const double ty = rng.uniform(-policy.max_translate_frac, policy.max_translate_frac) * height;
    // forward map about the image center: translate(center + t) . rotate .
    // shear . scale . translate(-center); shear acts as x' = x + sh*y
    const double cx = (width - 1) * 0.5, cy = (height - 1) * 0.5;
    const double f00 = std::cos(rot) * sc;
    const double f01 = std::cos(rot) * sc * sh - std::sin(rot) * sc;
    const double f10 = std::sin(rot) * sc;
    const double f11 = std::sin(rot) * sc * sh + std::cos(rot) * sc;
    const double f02 = cx + tx - (f00 * cx + f01 * cy);
    const double f12 = cy + ty - (f10 * cx + f11 * cy);
    // invert the 2x3 affine
    const double det = f00 * f11 - f01 * f10;
    if (std::abs(det) < 1e-12) throw NumericFailure("sample_affine: degenerate transform");
    p.inv[0] = f11 / det;
    p.inv[1] = -f01 / det;
    p.inv[2] = (f01 * f12 - f11 * f02) / det;
    p.inv[3] = -f10 / det;
    p.inv[4] = f00 / det;
    p.inv[5] = (f10 * f02 - f00 * f12) / det;
    p.identity = false;
    return p;
}

// Bilinear sample with clamp-to-edge coordinates.
inline float bilinear_sample(const float* frame, int height, int width, double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(height - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, width - 1);
    const int y1 = std::min(y0 + 1, height - 1);
    const double fx = x - x0, fy = y - y0;
    const double v00 = frame[static_cast<std::size_t>(y0) * width + x0];
    const double v01 = frame[static_cast<std::size_t>(y0) * width + x1];
    const double v10 = frame[static_cast<std::size_t>(y1) * width + x0];
    const double v11 = frame[static_cast<std::size_t>(y1) * width + x1];
    return static_cast<float>((v00 * (1 - fx) + v01 * fx) * (1 - fy) +
                              (v10 * (1 - fx) + v11 * fx) * fy);
}

inline void apply_affine_frame(const float* src, float* dst, int height, int width,
                               const AffineParams& p) {
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double sx = p.inv[0] * x + p.inv[1] * y + p.inv[2];
            const double sy = p.inv[3] * x + p.inv[4] * y + p.inv[5];
            const double v = p.gain * bilinear_sample(src, height, width, sx, sy);
            dst[static_cast<std::size_t>(y) * width + x] =
                static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
}

inline Tensor<float> augment_video(const Tensor<float>& video, const AffineParams& p) {
    if (video.rank() != 4) throw ContractViolation("augment_video: need [C,T,H,W]");
    if (p.identity && p.gain == 1.0) return video;  // bitwise passthrough
    const int C = video.dim(0), T = video.dim(1), H = video.dim(2), W = video.dim(3);
    Tensor<float> out(video.shape);
    for (int c = 0; c < C; ++c) {
        for (int f = 0; f < T; ++f) {
            const std::size_t off = (static_cast<std::size_t>(c) * T + f) *
                                    static_cast<std::size_t>(H) * W;
            if (p.identity) {
                for (std::size_t i = 0; i < static_cast<std::size_t>(H) * W; ++i) {
                    out.data[off + i] = static_cast<float>(
                        std::clamp(p.gain * static_cast<double>(video.data[off + i]), 0.0, 1.0));
                }
            } else {
                apply_affine_frame(video.data.data() + off, out.data.data() + off, H, W, p);
            }
        }
    }
    return out;
}

inline Tensor<float> augment_video(const Tensor<float>& video, const AugmentPolicy& policy,
                                   std::uint64_t seed) {
    if (policy.is_identity()) return video;
    Rng rng(seed);
    const auto params = sample_affine(policy, rng, video.dim(2), video.dim(3));
    return augment_video(video, params);
}

// ---------------------------------------------------------------------------
// temporal subsampling
// ---------------------------------------------------------------------------

// Frame indices floor(i*T/target); wraps modulo T when upsampling.
inline Tensor<float> temporal_subsample(const Tensor<float>& video, int target_frames) {
    if (video.rank() != 4) throw ContractViolation("temporal_subsample: need [C,T,H,W]");
    if (target_frames < 1) throw ContractViolation("temporal_subsample: target must be >= 1");
    const int C = video.dim(0), T = video.dim(1), H = video.dim(2), W = video.dim(3);
    if (target_frames == T) return video;
    Tensor<float> out(Shape{C, target_frames, H, W});
    const std::size_t frame_px = static_cast<std::size_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        for (int i = 0; i < target_frames; ++i) {
            const int src_f = static_cast<int>((static_cast<long long>(i) * T) / target_frames) % T;
            const float* src = video.data.data() +
                               (static_cast<std::size_t>(c) * T + src_f) * frame_px;
            float* dst = out.data.data() +
                         (static_cast<std::size_t>(c) * target_frames + i) * frame_px;
            std::copy(src, src + frame_px, dst);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// vocabulary and tokenizer
// ---------------------------------------------------------------------------

class Vocab {
  public:
    static constexpr int kPadId = 0;
    static constexpr int kClsId = 1;
    static constexpr int kUnkId = 2;

    Vocab() {
        add("<pad>");
        add("<cls>");
        add("<unk>");
    }

    static Vocab desk_default() {
        Vocab v;
        static const char* kWords[] = {
            "the",        "ejection",  "fraction",    "is",        "measured", "at",
            "percent",    "zero",      "one",         "two",       "three",    "four",
            "five",       "six",       "seven",       "eight",     "nine",     "systolic",
            "function",   "severely",  "reduced",     "mildly",    "normal",   "myocardial",
            "walls",      "are",       "thickened",   "wall",      "thickness", "within",
            "limits",     "chamber",   "dilated",     "size",      "image",    "quality",
            "adequate",   "patient",   "was",         "in",        "sinus",    "rhythm",
            "no",         "prior",     "studies",     "available", "for",      "comparison",
            "there",      "pericardial", "effusion",  "aortic",    "root",     "unremarkable",
        };
        for (const char* w : kWords) v.add(w);
        return v;
    }

    int add(const std::string& token) {
        auto it = ids_.find(token);
        if (it != ids_.end()) return it->second;
        const int id = static_cast<int>(tokens_.size());
        tokens_.push_back(token);
        ids_[token] = id;
        return id;
    }

    int id_of(const std::string& token) const {
        auto it = ids_.find(token);
        return it == ids_.end() ? kUnkId : it->second;
    }

    const std::string& token_of(int id) const {
        if (id < 0 || id >= static_cast<int>(tokens_.size())) {
            throw ContractViolation("Vocab: id out of range");
        }
        return tokens_[static_cast<std::size_t>(id)];
    }

    std::size_t size() const { return tokens_.size(); }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

// Lowercased whitespace tokens mapped to ids, class id first, padded or
// truncated to max_len. Padding positions are masked out of attention.
inline std::vector<int> tokenize(const std::vector<std::string>& sentences, const Vocab& vocab,
                                 int max_len) {
    if (max_len < 1) throw ContractViolation("tokenize: max_len must be >= 1");
    std::vector<int> ids;
    ids.push_back(Vocab::kClsId);
    for (const auto& sentence : sentences) {
        std::string word;
        for (char ch : sentence + " ") {
            if (std::isspace(static_cast<unsigned char>(ch))) {
                if (!word.empty()) {
                    ids.push_back(vocab.id_of(word));
                    word.clear();
                }
            } else {
                word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
            }
        }
        if (static_cast<int>(ids.size()) >= max_len) break;
    }
    ids.resize(static_cast<std::size_t>(max_len), Vocab::kPadId);
    return ids;
}

inline std::vector<std::string> detokenize(const std::vector<int>& ids, const Vocab& vocab) {
    std::vector<std::string> out;
    for (int id : ids) {
        if (id == Vocab::kPadId || id == Vocab::kClsId) continue;
        out.push_back(vocab.token_of(id));
    }
    return out;
}

}  // namespace cinecontrast::synth

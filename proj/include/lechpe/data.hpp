#pragma once
// Synthetic pose dataset: (yaw, pitch, roll) drawn uniformly in [-99, 99) and
// pushed through a fixed seeded two-layer tanh map to an observation vector,
// plus Gaussian noise. A fraction of samples get a contiguous window of
// coordinates zeroed and are flagged occluded. JSON Lines on disk, one header
// line then one record per sample.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lechpe/matrix.hpp"
#include "lechpe/rng.hpp"

namespace lechpe {

struct Sample {
    std::int64_t id = 0;
    std::vector<double> features;
    double yaw = 0, pitch = 0, roll = 0;  // degrees
    bool occluded = false;
};

struct GeneratorSpec {
    std::uint64_t seed = 0;
    int sample_count = 5000;
    int input_dim = 32;
    double occlusion_fraction = 0.3;
    double occlusion_mask_width = 0.5;  // fraction of input dims
    double noise_std = 0.1;

    void validate() const {
        if (sample_count < 1) throw std::invalid_argument("GeneratorSpec: sample_count < 1");
        if (input_dim < 1) throw std::invalid_argument("GeneratorSpec: input_dim < 1");
        if (occlusion_fraction < 0.0 || occlusion_fraction > 1.0)
            throw std::invalid_argument("GeneratorSpec: occlusion_fraction outside [0, 1]");
        if (!(occlusion_mask_width > 0.0) || !(occlusion_mask_width < 1.0))
            throw std::invalid_argument("GeneratorSpec: occlusion_mask_width outside (0, 1)");
        if (noise_std < 0.0) throw std::invalid_argument("GeneratorSpec: noise_std < 0");
    }
};

constexpr double kAngleRangeDeg = 99.0;  // angles live in [-99, 99)

inline int occlusion_window_width(const GeneratorSpec& spec) {
    int w = static_cast<int>(std::lround(spec.occlusion_mask_width * spec.input_dim));
    if (w < 1) w = 1;
    if (w > spec.input_dim) w = spec.input_dim;
    return w;
}

inline void apply_occlusion(Sample& s, int start, int width) {
    const int dim = static_cast<int>(s.features.size());
    if (start < 0 || width < 1 || start + width > dim) {
        throw std::invalid_argument("apply_occlusion: window [" + std::to_string(start) + ", " +
                                    std::to_string(start + width) + ") outside 0.." +
                                    std::to_string(dim));
    }
    for (int d = start; d < start + width; ++d) s.features[static_cast<std::size_t>(d)] = 0.0;
    s.occluded = true;
}

namespace detail {

// The angle -> observation map. Weights depend only on the seed, so one seed
// is one fixed synthetic world.
struct PoseObservationMap {
    static constexpr int kHidden = 32;
    std::vector<double> w1, b1, w2, b2;  // w1: hidden x 3, w2: dim x hidden
    int dim;

    PoseObservationMap(std::uint64_t seed, int input_dim) : dim(input_dim) {
        Rng rng(mix_seed(seed, 0x57A71C5EEDULL));
        w1.resize(kHidden * 3);
        b1.resize(kHidden);
        w2.resize(static_cast<std::size_t>(dim) * kHidden);
        b2.resize(static_cast<std::size_t>(dim));
        for (double& v : w1) v = rng.normal();
        for (double& v : b1) v = rng.normal(0.0, 0.5);
        for (double& v : w2) v = rng.normal(0.0, 1.0 / std::sqrt(double(kHidden)));
        for (double& v : b2) v = rng.normal(0.0, 0.1);
    }

    std::vector<double> observe(double yaw, double pitch, double roll) const {
        const double u[3] = {yaw / kAngleRangeDeg, pitch / kAngleRangeDeg,
                             roll / kAngleRangeDeg};
        double h[kHidden];
        for (int i = 0; i < kHidden; ++i) {
            double s = b1[static_cast<std::size_t>(i)];
            for (int j = 0; j < 3; ++j) s += w1[static_cast<std::size_t>(i * 3 + j)] * u[j];
            h[i] = std::tanh(s);
        }
        std::vector<double> x(static_cast<std::size_t>(dim));
        for (int i = 0; i < dim; ++i) {
            double s = b2[static_cast<std::size_t>(i)];
            for (int j = 0; j < kHidden; ++j)
                s += w2[static_cast<std::size_t>(i) * kHidden + j] * h[j];
            x[static_cast<std::size_t>(i)] = s;
        }
        return x;
    }
};

}  // namespace detail

inline std::vector<Sample> generate_dataset(const GeneratorSpec& spec) {
    spec.validate();
    detail::PoseObservationMap map(spec.seed, spec.input_dim);
    Rng angle_rng(mix_seed(spec.seed, 0xA1));
    Rng noise_rng(mix_seed(spec.seed, 0xB2));
    Rng occl_rng(mix_seed(spec.seed, 0xC3));
    const int width = occlusion_window_width(spec);

    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(spec.sample_count));
    for (int i = 0; i < spec.sample_count; ++i) {
        Sample s;
        s.id = i;
        s.yaw = angle_rng.uniform(-kAngleRangeDeg, kAngleRangeDeg);
        s.pitch = angle_rng.uniform(-kAngleRangeDeg, kAngleRangeDeg);
        s.roll = angle_rng.uniform(-kAngleRangeDeg, kAngleRangeDeg);
        s.features = map.observe(s.yaw, s.pitch, s.roll);
        for (double& f : s.features) f += noise_rng.normal(0.0, spec.noise_std);
        if (occl_rng.uniform() < spec.occlusion_fraction) {
            apply_occlusion(s, occl_rng.uniform_int(0, spec.input_dim - width), width);
        }
        out.push_back(std::move(s));
    }
    return out;
}

// Seeded stratified split: occluded and clean samples are shuffled and split
// separately so both sides keep the dataset's occlusion ratio.
inline std::pair<std::vector<Sample>, std::vector<Sample>> split(const std::vector<Sample>& data,
                                                                 double train_fraction,
                                                                 std::uint64_t seed) {
    if (!(train_fraction > 0.0) || !(train_fraction < 1.0)) {
        throw std::invalid_argument("split: train_fraction must lie in (0, 1)");
    }
    std::vector<std::size_t> clean, occluded;
    for (std::size_t i = 0; i < data.size(); ++i) {
        (data[i].occluded ? occluded : clean).push_back(i);
    }
    Rng rng(mix_seed(seed, 0x5B117ULL));
    rng.shuffle(clean);
    rng.shuffle(occluded);

    std::vector<Sample> train, val;
    auto take = [&](const std::vector<std::size_t>& idx) {
        const std::size_t n_train =
            static_cast<std::size_t>(std::llround(train_fraction * double(idx.size())));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            (i < n_train ? train : val).push_back(data[idx[i]]);
        }
    };
    take(clean);
    take(occluded);
    if (train.empty() || val.empty()) {
        throw std::invalid_argument("split: a side is empty (n = " + std::to_string(data.size()) +
                                    ", train_fraction = " + std::to_string(train_fraction) + ")");
    }
    return {std::move(train), std::move(val)};
}

// --------------------------------------------------------------------------
// JSON Lines dataset files
// --------------------------------------------------------------------------

inline void write_dataset(const std::vector<Sample>& samples, const GeneratorSpec& header,
                          const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_dataset: cannot open " + path);
    nlohmann::json h{{"seed", header.seed},
                     {"sample_count", header.sample_count},
                     {"input_dim", header.input_dim},
                     {"occlusion_fraction", header.occlusion_fraction},
                     {"occlusion_mask_width", header.occlusion_mask_width},
                     {"noise_std", header.noise_std},
                     {"format_version", 1}};
    out << h.dump() << "\n";
    for (const Sample& s : samples) {
        nlohmann::json rec{{"id", s.id},         {"features", s.features}, {"yaw", s.yaw},
                           {"pitch", s.pitch},   {"roll", s.roll},         {"occluded", s.occluded}};
        out << rec.dump() << "\n";
    }
    if (!out) throw std::runtime_error("write_dataset: write failed for " + path);
}

struct DatasetFile {
    GeneratorSpec header;
    std::vector<Sample> samples;
};

inline DatasetFile read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_dataset: cannot open " + path);
    DatasetFile out;
    std::string line;
    int line_no = 0;
    std::unordered_set<std::int64_t> ids;

    auto fail = [&](const std::string& what) {
        throw std::runtime_error("read_dataset: " + what + " at line " + std::to_string(line_no) +
                                 " of " + path);
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail(std::string("parse error (") + e.what() + ")");
        }
        try {
            if (line_no == 1) {
                if (j.value("format_version", 0) != 1) fail("unsupported format_version");
                out.header.seed = j.at("seed").get<std::uint64_t>();
                out.header.sample_count = j.at("sample_count").get<int>();
                out.header.input_dim = j.at("input_dim").get<int>();
                out.header.occlusion_fraction = j.at("occlusion_fraction").get<double>();
                out.header.occlusion_mask_width = j.at("occlusion_mask_width").get<double>();
                out.header.noise_std = j.at("noise_std").get<double>();
                continue;
            }
            Sample s;
            s.id = j.at("id").get<std::int64_t>();
            s.features = j.at("features").get<std::vector<double>>();
            s.yaw = j.at("yaw").get<double>();
            s.pitch = j.at("pitch").get<double>();
            s.roll = j.at("roll").get<double>();
            s.occluded = j.at("occluded").get<bool>();
            for (double f : s.features) {
                if (!std::isfinite(f)) fail("non-finite feature");
            }
            if (!std::isfinite(s.yaw) || !std::isfinite(s.pitch) || !std::isfinite(s.roll)) {
                fail("non-finite angle");
            }
            if (!ids.insert(s.id).second) fail("duplicate id " + std::to_string(s.id));
            out.samples.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            fail(std::string("malformed record (") + e.what() + ")");
        }
    }
    if (line_no == 0) throw std::runtime_error("read_dataset: " + path + " is empty (no header)");
    return out;
}

// features of a sample range as an N x dim matrix
inline Matrix features_matrix(const std::vector<Sample>& samples,
                              const std::vector<std::size_t>* subset = nullptr) {
    const std::size_t n = subset ? subset->size() : samples.size();
    if (n == 0) throw std::invalid_argument("features_matrix: no samples");
    const int dim = static_cast<int>(samples[subset ? (*subset)[0] : 0].features.size());
    Matrix x(static_cast<int>(n), dim);
    for (std::size_t r = 0; r < n; ++r) {
        const Sample& s = samples[subset ? (*subset)[r] : r];
        if (static_cast<int>(s.features.size()) != dim) {
            throw std::invalid_argument("features_matrix: inconsistent feature width at id " +
                                        std::to_string(s.id));
        }
        for (int d = 0; d < dim; ++d) x(static_cast<int>(r), d) = s.features[static_cast<std::size_t>(d)];
    }
    return x;
}

}  // namespace lechpe

#include "hivec/shift.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace hivec {

void Dataset::validate() const {
    const std::size_t n = size();
    if (labels.size() != n || outlier_flags.size() != n || group_labels.size() != n) {
        throw std::invalid_argument("Dataset: per-sample arrays do not match sample count");
    }
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y == kOutlierLabel) {
            if (!outlier_flags[i]) {
                throw std::invalid_argument("Dataset: sentinel label without outlier flag");
            }
        } else if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
            throw std::invalid_argument("Dataset: label " + std::to_string(y) + " outside [0, " +
                                        std::to_string(class_count) + ")");
        }
    }
}

ShiftKind parse_shift_kind(const std::string& name) {
    if (name == "gaussian-noise") return ShiftKind::GaussianNoise;
    if (name == "feature-rotation") return ShiftKind::FeatureRotation;
    if (name == "mean-shift") return ShiftKind::MeanShift;
    if (name == "spurious-flip") return ShiftKind::SpuriousFlip;
    throw std::invalid_argument("unknown shift kind '" + name + "'");
}

std::string shift_kind_name(ShiftKind kind) {
    switch (kind) {
        case ShiftKind::GaussianNoise: return "gaussian-noise";
        case ShiftKind::FeatureRotation: return "feature-rotation";
        case ShiftKind::MeanShift: return "mean-shift";
        case ShiftKind::SpuriousFlip: return "spurious-flip";
    }
    throw std::logic_error("unreachable shift kind");
}

namespace {

void check_severity(int severity) {
    if (severity < 0 || severity > 5) {
        throw std::invalid_argument("severity must be in 0..5, got " + std::to_string(severity));
    }
}

constexpr double kNoiseSigma[5] = {0.2, 0.4, 0.8, 1.2, 1.6};
constexpr double kRotationDeg[5] = {5.0, 10.0, 20.0, 35.0, 50.0};
constexpr double kMeanShiftScale[5] = {0.5, 1.0, 2.0, 3.0, 4.0};

}  // namespace

double noise_sigma_for_severity(int severity) {
    check_severity(severity);
    return severity == 0 ? 0.0 : kNoiseSigma[severity - 1];
}

double rotation_angle_deg_for_severity(int severity) {
    check_severity(severity);
    return severity == 0 ? 0.0 : kRotationDeg[severity - 1];
}

double mean_shift_scale_for_severity(int severity) {
    check_severity(severity);
    return severity == 0 ? 0.0 : kMeanShiftScale[severity - 1];
}

std::vector<Matrix> source_class_means(const SourceSpec& spec) {
    if (spec.class_count < 2) {
        throw std::invalid_argument("SourceSpec: class_count must be >= 2");
    }
    if (spec.mean_separation < 4.0) {
        throw std::invalid_argument("SourceSpec: mean_separation must be >= 4");
    }
    const std::size_t c = spec.class_count;
    const std::size_t d = spec.input_dim;
    Rng rng(spec.seed * 0x9e3779b97f4a7c15ULL + 0x713a4c5d8e2f1b67ULL);
    const double target = spec.mean_separation * spec.cov_scale;

    if (c <= d) {
        // Regular simplex under a seeded random orthonormal frame: every
        // pair of class means sits at exactly the target separation, so the
        // severity ladder degrades all class boundaries evenly.
        std::vector<std::vector<double>> frame;  // c orthonormal D-vectors
        while (frame.size() < c) {
            std::vector<double> v = rng.normal_vector(d);
            for (const auto& u : frame) {
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += v[j] * u[j];
                for (std::size_t j = 0; j < d; ++j) v[j] -= dot * u[j];
            }
            double n = 0.0;
            for (double x : v) n += x * x;
            n = std::sqrt(n);
            if (n < 1e-8) continue;
            for (double& x : v) x /= n;
            frame.push_back(std::move(v));
        }
        // Centered unit-basis simplex has pairwise distance sqrt(2).
        const double scale = target / std::sqrt(2.0);
        std::vector<Matrix> means;
        for (std::size_t k = 0; k < c; ++k) {
            Matrix m(1, d);
            for (std::size_t j = 0; j < d; ++j) {
                double coord = 0.0;
                for (std::size_t i = 0; i < c; ++i) {
                    const double simplex = (i == k ? 1.0 : 0.0) - 1.0 / static_cast<double>(c);
                    coord += simplex * frame[i][j];
                }
                m.data[j] = scale * coord;
            }
            means.push_back(std::move(m));
        }
        // Weak diffuse offsets on top of the strong subspace structure.
        const double fine = spec.fine_strength * spec.cov_scale;
        if (fine > 0.0) {
            for (Matrix& m : means) {
                for (double& v : m.data) v += fine * rng.normal();
            }
        }
        return means;
    }

    // More classes than dimensions: random means rescaled until the closest
    // pair meets the separation target.
    std::vector<Matrix> means;
    for (std::size_t k = 0; k < c; ++k) {
        Matrix m(1, d);
        for (double& v : m.data) v = rng.normal();
        means.push_back(std::move(m));
    }
    double min_dist = -1.0;
    for (std::size_t a = 0; a < means.size(); ++a) {
        for (std::size_t b = a + 1; b < means.size(); ++b) {
            double sq = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = means[a].data[j] - means[b].data[j];
                sq += diff * diff;
            }
            const double dist = std::sqrt(sq);
            if (min_dist < 0.0 || dist < min_dist) min_dist = dist;
        }
    }
    if (!(min_dist > 0.0)) {
        throw std::runtime_error("source_class_means: degenerate coincident means");
    }
    if (min_dist < target) {
        const double factor = target / min_dist;
        for (Matrix& m : means) {
            for (double& v : m.data) v *= factor;
        }
    }
    return means;
}

Dataset gen_source(const SourceSpec& spec) {
    if (spec.sample_count < spec.class_count * 10) {
        throw std::invalid_argument("SourceSpec: sample_count must be >= 10 per class");
    }
    const std::vector<Matrix> means = source_class_means(spec);
    Rng rng(spec.sample_seed != 0 ? spec.sample_seed : spec.seed);

    Dataset ds;
    ds.class_count = spec.class_count;
    ds.x = Matrix(spec.sample_count, spec.input_dim);
    ds.labels.resize(spec.sample_count);
    ds.outlier_flags.assign(spec.sample_count, 0);
    ds.group_labels.assign(spec.sample_count, kNoGroup);

    for (std::size_t i = 0; i < spec.sample_count; ++i) {
        // Round-robin labels keep the class histogram balanced within 1.
        const std::size_t k = i % spec.class_count;
        ds.labels[i] = static_cast<int>(k);
        double* row = ds.x.data.data() + i * spec.input_dim;
        const double* mu = means[k].data.data();
        for (std::size_t j = 0; j < spec.input_dim; ++j) {
            row[j] = mu[j] + spec.cov_scale * rng.normal();
        }
    }
    return ds;
}

Dataset apply_shift(const Dataset& dataset, const ShiftSpec& shift, Rng& rng) {
    check_severity(shift.severity);
    Dataset out = dataset;
    if (shift.severity == 0) return out;  // identity convention
    const std::size_t dim = dataset.dim();

    switch (shift.kind) {
        case ShiftKind::GaussianNoise: {
            const double sigma = noise_sigma_for_severity(shift.severity);
            for (double& v : out.x.data) v += sigma * rng.normal();
            break;
        }
        case ShiftKind::FeatureRotation: {
            // Rotation by theta inside a random 2-plane spanned by (u, v).
            std::vector<double> u = rng.normal_vector(dim);
            std::vector<double> v = rng.normal_vector(dim);
            auto norm = [](const std::vector<double>& a) {
                double s = 0.0;
                for (double x : a) s += x * x;
                return std::sqrt(s);
            };
            const double nu = norm(u);
            for (double& x : u) x /= nu;
            double uv = 0.0;
            for (std::size_t j = 0; j < dim; ++j) uv += u[j] * v[j];
            for (std::size_t j = 0; j < dim; ++j) v[j] -= uv * u[j];
            const double nv = norm(v);
            if (!(nv > 0.0)) throw std::runtime_error("apply_shift: degenerate rotation plane");
            for (double& x : v) x /= nv;

            const double theta =
                rotation_angle_deg_for_severity(shift.severity) * 3.14159265358979323846 / 180.0;
            const double c = std::cos(theta), s = std::sin(theta);
            for (std::size_t i = 0; i < out.size(); ++i) {
                double* row = out.x.data.data() + i * dim;
                double pu = 0.0, pv = 0.0;
                for (std::size_t j = 0; j < dim; ++j) {
                    pu += row[j] * u[j];
                    pv += row[j] * v[j];
                }
                const double au = (c - 1.0) * pu - s * pv;
                const double av = s * pu + (c - 1.0) * pv;
                for (std::size_t j = 0; j < dim; ++j) row[j] += au * u[j] + av * v[j];
            }
            break;
        }
        case ShiftKind::MeanShift: {
            std::vector<double> dir = rng.normal_vector(dim);
            double n = 0.0;
            for (double x : dir) n += x * x;
            n = std::sqrt(n);
            if (!(n > 0.0)) throw std::runtime_error("apply_shift: degenerate shift direction");
            const double magnitude = mean_shift_scale_for_severity(shift.severity);
            for (std::size_t i = 0; i < out.size(); ++i) {
                double* row = out.x.data.data() + i * dim;
                for (std::size_t j = 0; j < dim; ++j) row[j] += magnitude * dir[j] / n;
            }
            break;
        }
        case ShiftKind::SpuriousFlip: {
            bool any_group = false;
            for (std::uint8_t g : out.group_labels) any_group |= (g != kNoGroup);
            if (!any_group) {
                throw std::invalid_argument(
                    "apply_shift: spurious-flip needs a dataset with group labels");
            }
            // Negating the spurious block flips each sample's spurious sign,
            // turning correlation +rho into -rho; group sign bits follow.
            const std::size_t block = std::min<std::size_t>(shift.spurious_block_dim, dim);
            for (std::size_t i = 0; i < out.size(); ++i) {
                double* row = out.x.data.data() + i * dim;
                for (std::size_t j = dim - block; j < dim; ++j) row[j] = -row[j];
                if (out.group_labels[i] != kNoGroup) {
                    out.group_labels[i] = static_cast<std::uint8_t>(out.group_labels[i] ^ 1u);
                }
            }
            break;
        }
    }
    return out;
}

namespace {

std::vector<Matrix> outlier_component_means(const SourceSpec& source, const ShiftSpec& shift,
                                            Rng& rng) {
    const std::vector<Matrix> source_means = source_class_means(source);
    double shell = 0.0;
    for (const Matrix& m : source_means) shell += frobenius_norm(m);
    shell /= static_cast<double>(source_means.size());

    // Components sit on the class-mean shell so their samples stay in the
    // feature range of real data, but in directions kept at least
    // outlier_separation x cov_scale away from every class mean. Rejection
    // failures widen the radius so the construction always terminates.
    const double min_dist = shift.outlier_separation * source.cov_scale;
    std::vector<Matrix> means;
    for (std::size_t k = 0; k < shift.outlier_components; ++k) {
        double radius = std::max(shell, min_dist);
        std::size_t attempts = 0;
        while (true) {
            Matrix cand(1, source.input_dim);
            double n = 0.0;
            for (double& v : cand.data) {
                v = rng.normal();
                n += v * v;
            }
            n = std::sqrt(n);
            if (!(n > 0.0)) continue;
            for (double& v : cand.data) v = v / n * radius;

            double nearest = -1.0;
            for (const Matrix& m : source_means) {
                double sq = 0.0;
                for (std::size_t j = 0; j < source.input_dim; ++j) {
                    const double d = cand.data[j] - m.data[j];
                    sq += d * d;
                }
                const double dist = std::sqrt(sq);
                if (nearest < 0.0 || dist < nearest) nearest = dist;
            }
            if (nearest >= min_dist) {
                means.push_back(std::move(cand));
                break;
            }
            if (++attempts % 200 == 0) radius *= 1.1;
        }
    }
    return means;
}

std::size_t round_ties_up(double v) {
    return static_cast<std::size_t>(std::floor(v + 0.5));
}

}  // namespace

std::vector<BatchRecord> make_stream(const Dataset& dataset, const SourceSpec& source,
                                     const ShiftSpec& shift, std::size_t batch_size, Rng& rng) {
    if (shift.outlier_ratio < 0.0 || shift.outlier_ratio >= 1.0) {
        throw std::invalid_argument("make_stream: outlier_ratio must be in [0, 1)");
    }
    if (batch_size == 0 || batch_size > dataset.size()) {
        throw std::invalid_argument("make_stream: batch_size " + std::to_string(batch_size) +
                                    " invalid for dataset of " + std::to_string(dataset.size()));
    }
    const std::size_t n_out = round_ties_up(shift.outlier_ratio * static_cast<double>(batch_size));
    if (n_out >= batch_size) {
        throw std::invalid_argument("make_stream: outlier_ratio leaves no inlier slots");
    }
    const std::size_t n_in = batch_size - n_out;
    const std::size_t dim = dataset.dim();

    const std::vector<Matrix> outlier_means =
        shift.outlier_ratio > 0.0 ? outlier_component_means(source, shift, rng)
                                  : std::vector<Matrix>{};

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    const std::string descriptor = shift_kind_name(shift.kind) + ":s" +
                                   std::to_string(shift.severity) + ":ratio" +
                                   std::to_string(shift.outlier_ratio);

    std::vector<BatchRecord> stream;
    std::size_t consumed = 0;
    while (consumed < order.size()) {
        std::size_t take = std::min(n_in, order.size() - consumed);
        // Never strand a single inlier in its own trailing batch; it could
        // not feed batch statistics.
        if (order.size() - consumed - take == 1) take += 1;
        std::size_t outliers = n_out;
        if (take != n_in) {
            // Off-size batches keep the outlier fraction on target.
            outliers = round_ties_up(shift.outlier_ratio / (1.0 - shift.outlier_ratio) *
                                     static_cast<double>(take));
        }
        const std::size_t total = take + outliers;

        // Lay out inliers first, then outliers, then shuffle slot order.
        std::vector<std::size_t> slots(total);
        std::iota(slots.begin(), slots.end(), 0);
        rng.shuffle(slots);

        BatchRecord batch;
        batch.x = Matrix(total, dim);
        batch.true_labels.assign(total, kOutlierLabel);
        batch.outlier_flags.assign(total, 1);
        batch.group_labels.assign(total, kNoGroup);
        batch.shift_descriptor = descriptor;

        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t src = order[consumed + i];
            const std::size_t slot = slots[i];
            std::copy_n(dataset.x.data.data() + src * dim, dim,
                        batch.x.data.data() + slot * dim);
            batch.true_labels[slot] = dataset.labels[src];
            batch.outlier_flags[slot] = dataset.outlier_flags[src];
            batch.group_labels[slot] = dataset.group_labels[src];
        }
        for (std::size_t i = take; i < total; ++i) {
            const std::size_t slot = slots[i];
            const std::size_t comp = outlier_means.empty()
                                         ? 0
                                         : static_cast<std::size_t>(
                                               rng.uniform_below(outlier_means.size()));
            double* row = batch.x.data.data() + slot * dim;
            const double* mu = outlier_means[comp].data.data();
            for (std::size_t j = 0; j < dim; ++j) {
                row[j] = mu[j] + source.cov_scale * rng.normal();
            }
        }
        consumed += take;
        stream.push_back(std::move(batch));
    }
    return stream;
}

Dataset gen_spurious(const SpuriousSpec& spec) {
    if (spec.base.class_count != 2) {
        throw std::invalid_argument("gen_spurious: spurious protocol is two-class");
    }
    if (std::abs(spec.correlation) > 1.0) {
        throw std::invalid_argument("gen_spurious: |correlation| must be <= 1");
    }
    Dataset base = gen_source(spec.base);
    Rng rng((spec.base.sample_seed != 0 ? spec.base.sample_seed : spec.base.seed) ^ 0x5bd1e995u);

    const std::size_t d0 = base.dim();
    const std::size_t d1 = d0 + spec.block_dim;
    Dataset out;
    out.class_count = 2;
    out.labels = base.labels;
    out.outlier_flags = base.outlier_flags;
    out.group_labels.resize(base.size());
    out.x = Matrix(base.size(), d1);

    const double agree_prob = (1.0 + spec.correlation) / 2.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        std::copy_n(base.x.data.data() + i * d0, d0, out.x.data.data() + i * d1);
        const bool agree = rng.uniform() < agree_prob;
        const int class_sign = base.labels[i] == 1 ? 1 : -1;
        const int s = agree ? class_sign : -class_sign;
        double* block = out.x.data.data() + i * d1 + d0;
        for (std::size_t j = 0; j < spec.block_dim; ++j) {
            block[j] = s * spec.block_strength + spec.block_noise * rng.normal();
        }
        out.group_labels[i] =
            static_cast<std::uint8_t>(base.labels[i] * 2 + (s > 0 ? 1 : 0));
    }
    return out;
}

// ---------------------------------------------------------------------------
// HVDS container
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

void put_i32(std::string& buf, std::int32_t v) { put_u32(buf, static_cast<std::uint32_t>(v)); }

class Reader {
public:
    Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) {
            throw std::runtime_error("truncated HVDS file: " + path_);
        }
    }
    std::size_t pos() const { return pos_; }

private:
    const std::string& buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    ds.validate();
    std::string buf;
    buf.reserve(20 + ds.x.data.size() * 4 + ds.size() * 6);
    buf += "HVDS";
    put_u32(buf, 1);
    put_u32(buf, static_cast<std::uint32_t>(ds.size()));
    put_u32(buf, static_cast<std::uint32_t>(ds.dim()));
    put_u32(buf, static_cast<std::uint32_t>(ds.class_count));
    for (double v : ds.x.data) put_f32(buf, static_cast<float>(v));
    for (int y : ds.labels) put_i32(buf, y);
    for (std::uint8_t f : ds.outlier_flags) buf.push_back(static_cast<char>(f));
    for (std::uint8_t g : ds.group_labels) buf.push_back(static_cast<char>(g));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 20 || buf.compare(0, 4, "HVDS") != 0) {
        throw std::runtime_error("not an HVDS file: " + path);
    }
    Reader reader(buf, path);
    reader.u32();  // magic bytes, already checked
    const std::uint32_t version = reader.u32();
    if (version != 1) {
        throw std::runtime_error("unsupported HVDS version " + std::to_string(version) + ": " +
                                 path);
    }
    const std::uint32_t n = reader.u32();
    const std::uint32_t d = reader.u32();
    const std::uint32_t c = reader.u32();

    Dataset ds;
    ds.class_count = c;
    ds.x = Matrix(n, d);
    for (double& v : ds.x.data) v = static_cast<double>(reader.f32());
    ds.labels.resize(n);
    for (int& y : ds.labels) y = reader.i32();
    ds.outlier_flags.resize(n);
    for (std::uint8_t& f : ds.outlier_flags) f = reader.u8();
    ds.group_labels.resize(n);
    for (std::uint8_t& g : ds.group_labels) g = reader.u8();
    if (reader.pos() != buf.size()) {
        throw std::runtime_error("trailing bytes in HVDS file: " + path);
    }
    ds.validate();
    return ds;
}

}  // namespace hivec

#include "hivec/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace hivec {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

void put_tensor(std::string& buf, const std::string& name, const Matrix& m) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put_u32(buf, static_cast<std::uint32_t>(m.rows));
    put_u32(buf, static_cast<std::uint32_t>(m.cols));
    for (double v : m.data) put_f64(buf, v);
}

Matrix row_matrix(const std::vector<double>& v) {
    Matrix m(1, v.size());
    m.data = v;
    return m;
}

class Reader {
public:
    Reader(std::string buf, std::string path) : buf_(std::move(buf)), path_(std::move(path)) {}

    bool eof() const { return pos_ == buf_.size(); }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) {
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i]))
                    << (8 * i);
        }
        pos_ += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw std::runtime_error("truncated HVMC file: " + path_);
    }
    std::string buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const EncoderParams& encoder, const HeadSet& heads, const std::string& path) {
    encoder.validate();
    heads.validate(encoder.feature_dim());

    std::string buf;
    buf += "HVMC";
    put_u32(buf, kVersion);
    for (std::size_t i = 0; i < encoder.layers.size(); ++i) {
        const DenseLayer& l = encoder.layers[i];
        const std::string prefix = "layer." + std::to_string(i) + ".";
        put_tensor(buf, prefix + "W", l.W);
        put_tensor(buf, prefix + "b", row_matrix(l.b));
        put_tensor(buf, prefix + "gamma", row_matrix(l.gamma));
        put_tensor(buf, prefix + "beta", row_matrix(l.beta));
        put_tensor(buf, prefix + "running_mean", row_matrix(l.running_mean));
        put_tensor(buf, prefix + "running_var", row_matrix(l.running_var));
    }
    for (std::size_t i = 0; i < heads.size(); ++i) {
        put_tensor(buf, "head." + std::to_string(i), heads.weights[i]);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::pair<EncoderParams, HeadSet> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 8 || buf.compare(0, 4, "HVMC") != 0) {
        throw std::runtime_error("not an HVMC file: " + path);
    }
    Reader r(std::move(buf), path);
    r.bytes(4);  // magic
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw std::runtime_error("unsupported HVMC version " + std::to_string(version) + ": " +
                                 path);
    }

    std::map<std::string, Matrix> tensors;
    while (!r.eof()) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.bytes(name_len);
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        Matrix m(rows, cols);
        for (double& v : m.data) v = r.f64();
        if (!tensors.emplace(name, std::move(m)).second) {
            throw std::runtime_error("duplicate tensor '" + name + "' in " + path);
        }
    }

    auto take = [&](const std::string& name) -> Matrix {
        auto it = tensors.find(name);
        if (it == tensors.end()) {
            throw std::runtime_error("missing tensor '" + name + "' in " + path);
        }
        Matrix m = std::move(it->second);
        tensors.erase(it);
        return m;
    };
    auto take_vector = [&](const std::string& name) {
        Matrix m = take(name);
        if (m.rows != 1) throw std::runtime_error("tensor '" + name + "' is not a vector");
        return m.data;
    };

    EncoderParams encoder;
    for (std::size_t i = 0; tensors.count("layer." + std::to_string(i) + ".W") > 0; ++i) {
        const std::string prefix = "layer." + std::to_string(i) + ".";
        DenseLayer l;
        l.W = take(prefix + "W");
        l.b = take_vector(prefix + "b");
        l.gamma = take_vector(prefix + "gamma");
        l.beta = take_vector(prefix + "beta");
        l.running_mean = take_vector(prefix + "running_mean");
        l.running_var = take_vector(prefix + "running_var");
        encoder.layers.push_back(std::move(l));
    }
    if (encoder.layers.empty()) throw std::runtime_error("no encoder layers in " + path);
    // ReLU on all layers but the last mirrors how encoders are constructed.
    for (auto& l : encoder.layers) l.relu = true;
    encoder.layers.back().relu = false;

    HeadSet heads;
    for (std::size_t i = 0; tensors.count("head." + std::to_string(i)) > 0; ++i) {
        Matrix w = take("head." + std::to_string(i));
        heads.dims.push_back(w.rows);
        heads.weights.push_back(std::move(w));
    }
    if (heads.weights.empty()) throw std::runtime_error("no heads in " + path);
    heads.class_count = heads.weights.front().cols;

    if (!tensors.empty()) {
        throw std::runtime_error("unexpected tensor '" + tensors.begin()->first + "' in " + path);
    }
    encoder.validate();
    heads.validate(encoder.feature_dim());
    return {std::move(encoder), std::move(heads)};
}

}  // namespace hivec

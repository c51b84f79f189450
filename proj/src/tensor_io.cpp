#include "vitol/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vitol/io_error.hpp"

namespace vitol {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
  public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    bool done() const { return pos_ == bytes_.size(); }

    std::uint64_t uint(int width, const char* what) {
        need(static_cast<std::size_t>(width), what);
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(width);
        return v;
    }

    std::string text(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

  private:
    void need(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw IoError(std::string("truncated tensor file while reading ") + what);
        }
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

std::string read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::string encode_tensor_file(const TensorFile& file) {
    std::string out(kFileMagic.begin(), kFileMagic.end());
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(file.config_text.size()));
    out += file.config_text;
    for (const auto& t : file.tensors) {
        put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
        for (std::size_t d : t.value.shape()) put_u64(out, d);
        for (double v : t.value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

TensorFile decode_tensor_file(const std::string& bytes) {
    Reader r(bytes);
    const std::string magic = r.text(4, "magic");
    if (magic != std::string(kFileMagic.begin(), kFileMagic.end())) {
        throw IoError("bad magic: not a VTOL tensor file");
    }
    const auto version = r.uint(4, "version");
    if (version != kFormatVersion) {
        throw IoError("unsupported tensor file version " + std::to_string(version));
    }
    TensorFile file;
    file.config_text = r.text(r.uint(4, "config length"), "config block");
    while (!r.done()) {
        Parameter p;
        p.name = r.text(r.uint(4, "name length"), "tensor name");
        const auto rank = r.uint(4, "rank");
        if (rank == 0 || rank > 8) throw IoError("implausible rank for tensor " + p.name);
        std::vector<std::size_t> shape(rank);
        std::size_t count = 1;
        for (auto& d : shape) {
            d = r.uint(8, "dims");
            if (d == 0 || d > (std::size_t{1} << 32)) throw IoError("bad dimension in " + p.name);
            count *= d;
        }
        std::vector<double> data(count);
        for (double& v : data) v = std::bit_cast<double>(r.uint(8, "values"));
        p.value = Tensor(std::move(shape), std::move(data));
        file.tensors.push_back(std::move(p));
    }
    return file;
}

void write_tensor_file(const std::string& path, const TensorFile& file) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    const std::string bytes = encode_tensor_file(file);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path);
}

TensorFile read_tensor_file(const std::string& path) {
    try {
        return decode_tensor_file(read_all(path));
    } catch (const IoError& e) {
        throw IoError(path + ": " + e.what());
    }
}

void save_checkpoint(const std::string& path, const VisionTransformer& model) {
    write_tensor_file(path, {model.config().to_text(), model.parameters()});
}

VisionTransformer load_checkpoint(const std::string& path) {
    TensorFile file = read_tensor_file(path);
    VisionTransformer model(ModelConfig::from_text(file.config_text));
    model.load_parameters(file.tensors);
    return model;
}

void save_stacks(const std::string& path, const StackFile& stacks) {
    TensorFile file;
    auto add = [&file](const char* prefix, const std::vector<Tensor>& stack) {
        for (std::size_t b = 0; b < stack.size(); ++b) {
            file.tensors.push_back({std::string(prefix) + "." + std::to_string(b), stack[b]});
        }
    };
    add("attn", stacks.attention);
    add("grad", stacks.grads);
    add("rel", stacks.relevances);
    write_tensor_file(path, file);
}

StackFile load_stacks(const std::string& path) {
    TensorFile file = read_tensor_file(path);
    StackFile out;
    for (auto& t : file.tensors) {
        const auto dot = t.name.find('.');
        if (dot == std::string::npos) throw IoError(path + ": unexpected tensor " + t.name);
        const std::string prefix = t.name.substr(0, dot);
        std::vector<Tensor>* stack = prefix == "attn"   ? &out.attention
                                     : prefix == "grad" ? &out.grads
                                     : prefix == "rel"  ? &out.relevances
                                                        : nullptr;
        if (!stack) throw IoError(path + ": unexpected tensor " + t.name);
        if (t.name.substr(dot + 1) != std::to_string(stack->size())) {
            throw IoError(path + ": tensor " + t.name + " out of order");
        }
        stack->push_back(std::move(t.value));
    }
    return out;
}

}  // namespace vitol

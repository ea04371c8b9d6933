// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/pipeline/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "moca/errors.hpp"

namespace moca {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

class Writer {
public:
    template <class T>
    void pod(T v) {
        char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        buf_.append(b, sizeof(T));
    }
    void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    void str32(const std::string& s) {
        pod(static_cast<std::uint32_t>(s.size()));
        buf_ += s;
    }
    const std::string& data() const { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

    template <class T>
    T pod() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
    const char* take(std::size_t n) {
        if (n > data_.size() - pos_) {
            throw FormatError(origin_ + ": truncated at byte offset " + std::to_string(pos_) + " (needed " +
                              std::to_string(n) + " more bytes)");
        }
        const char* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::string str32() {
        const auto n = pod<std::uint32_t>();
        return {take(n), n};
    }
    bool done() const { return pos_ == data_.size(); }
    std::size_t pos() const { return pos_; }

private:
    std::string data_;
    std::string origin_;
    std::size_t pos_ = 0;
};

} // namespace

const Tensor* TensorFile::find_tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) {
            return &t;
        }
    }
    return nullptr;
}

const std::string* TensorFile::find_record(const std::string& name) const {
    for (const auto& [n, r] : records) {
        if (n == name) {
            return &r;
        }
    }
    return nullptr;
}

void write_tensor_file(const TensorFile& file, const std::filesystem::path& path) {
    Writer w;
    w.bytes(kCheckpointMagic, 5);
    w.pod(static_cast<std::uint32_t>(file.tensors.size()));
    for (const auto& [name, t] : file.tensors) {
        w.str32(name);
        w.pod(static_cast<std::uint8_t>(t.dtype()));
        w.pod(static_cast<std::uint32_t>(t.ndim()));
        for (std::int64_t d : t.shape()) {
            w.pod(static_cast<std::uint64_t>(d));
        }
        visit_dtype(t.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const auto data = t.data<T>();
            w.bytes(data.data(), data.size_bytes());
        });
    }
    for (const auto& [name, payload] : file.records) {
        w.str32(name);
        w.pod(static_cast<std::uint64_t>(payload.size()));
        w.bytes(payload.data(), payload.size());
    }
    w.str32("end");
    w.pod(std::uint64_t{0});

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
        if (!out) {
            throw FormatError("failed writing " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open checkpoint " + path.string());
    }
    Reader r({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}, path.string());
    if (std::memcmp(r.take(5), kCheckpointMagic, 5) != 0) {
        throw FormatError(path.string() + ": not a MOCA1 checkpoint (bad magic or version)");
    }
    TensorFile file;
    const auto count = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str32();
        const auto dt = r.pod<std::uint8_t>();
        if (dt > 1) {
            throw FormatError(path.string() + ": tensor '" + name + "' has unknown dtype code " + std::to_string(dt));
        }
        const auto ndim = r.pod<std::uint32_t>();
        Shape shape;
        for (std::uint32_t k = 0; k < ndim; ++k) {
            shape.push_back(static_cast<std::int64_t>(r.pod<std::uint64_t>()));
        }
        Tensor t = Tensor::zeros(shape, static_cast<DType>(dt));
        visit_dtype(t.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto data = t.mutable_data<T>();
            std::memcpy(data.data(), r.take(data.size_bytes()), data.size_bytes());
        });
        file.tensors.emplace_back(std::move(name), std::move(t));
    }
    while (true) {
        std::string name = r.str32();
        const auto len = r.pod<std::uint64_t>();
        std::string payload(r.take(len), len);
        if (name == "end") {
            break;
        }
        file.records.emplace_back(std::move(name), std::move(payload));
    }
    if (!r.done()) {
        throw FormatError(path.string() + ": trailing bytes after the end record at offset " + std::to_string(r.pos()));
    }
    return file;
}

std::string encode_i64(std::int64_t v) { return {reinterpret_cast<const char*>(&v), sizeof v}; }
std::string encode_u64(std::uint64_t v) { return {reinterpret_cast<const char*>(&v), sizeof v}; }
std::string encode_f64(double v) { return {reinterpret_cast<const char*>(&v), sizeof v}; }

std::string encode_i64_array(const std::vector<std::int64_t>& v) {
    return {reinterpret_cast<const char*>(v.data()), v.size() * sizeof(std::int64_t)};
}

namespace {

template <class T>
T decode_pod(const std::string& s) {
    if (s.size() != sizeof(T)) {
        throw FormatError("record payload of " + std::to_string(s.size()) + " bytes, expected " +
                          std::to_string(sizeof(T)));
    }
    T v;
    std::memcpy(&v, s.data(), sizeof(T));
    return v;
}

} // namespace

std::int64_t decode_i64(const std::string& s) { return decode_pod<std::int64_t>(s); }
std::uint64_t decode_u64(const std::string& s) { return decode_pod<std::uint64_t>(s); }
double decode_f64(const std::string& s) { return decode_pod<double>(s); }

std::vector<std::int64_t> decode_i64_array(const std::string& s) {
    if (s.size() % sizeof(std::int64_t) != 0) {
        throw FormatError("integer array record has a partial element");
    }
    std::vector<std::int64_t> v(s.size() / sizeof(std::int64_t));
    std::memcpy(v.data(), s.data(), s.size());
    return v;
}

void restore_tree(const TensorFile& file, const std::string& prefix, ParamTree& into) {
    std::string diff;
    for (auto& [name, t] : into) {
        const Tensor* src = file.find_tensor(prefix + name);
        if (src == nullptr) {
            diff += "\n  " + prefix + name + ": missing from checkpoint (expected " + to_string(t.shape()) + ")";
        } else if (src->shape() != t.shape() || src->dtype() != t.dtype()) {
            diff += "\n  " + prefix + name + ": checkpoint " + to_string(src->shape()) + " " +
                    to_string(src->dtype()) + " vs config " + to_string(t.shape()) + " " + to_string(t.dtype());
        }
    }
    for (const auto& [name, t] : file.tensors) {
        if (name.starts_with(prefix) && !into.contains(name.substr(prefix.size()))) {
            diff += "\n  " + name + ": present in checkpoint " + to_string(t.shape()) + " but not in config";
        }
    }
    if (!diff.empty()) {
        throw ConfigError("checkpoint does not match the configured model:" + diff);
    }
    for (auto& [name, t] : into) {
        const Tensor* src = file.find_tensor(prefix + name);
        visit_dtype(t.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const auto s = src->data<T>();
            auto d = t.mutable_data<T>();
            std::copy(s.begin(), s.end(), d.begin());
        });
    }
}

} // namespace moca

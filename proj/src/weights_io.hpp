#pragma once

// Shared tensor-block encoding used by the checkpoint and transcript
// containers.  Internal to the library.

#include "binio.hpp"
#include "obf/nn.hpp"

namespace obf::nn_io {

inline void write_weights_block(binio::Writer& wr, const nn::ModelWeights& w) {
    wr.bytes(w.arch_fingerprint.data(), w.arch_fingerprint.size());
    wr.u64(w.tensors.size());
    for (const auto& t : w.tensors) {
        wr.str(t.name);
        wr.u32(std::uint32_t(t.shape.size()));
        for (int d : t.shape) wr.u32(std::uint32_t(d));
        wr.u64(t.values.size());
        for (double v : t.values) wr.f64(v);
    }
}

inline nn::ModelWeights read_weights_block(binio::Reader& rd) {
    nn::ModelWeights w;
    rd.bytes(w.arch_fingerprint.data(), w.arch_fingerprint.size());
    w.tensors.resize(rd.u64());
    for (auto& t : w.tensors) {
        t.name = rd.str();
        t.shape.resize(rd.u32());
        for (auto& d : t.shape) d = int(rd.u32());
        std::size_t expect = 1;
        for (int d : t.shape) expect *= std::size_t(d);
        t.values.resize(rd.u64());
        if (t.values.size() != expect)
            throw IoError("tensor " + t.name + " element count disagrees with its shape");
        for (auto& v : t.values) v = rd.f64();
    }
    return w;
}

}  // namespace obf::nn_io

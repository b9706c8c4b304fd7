#ifndef GEOMEM_REP3D_HPP_
#define GEOMEM_REP3D_HPP_

#include <cmath>
#include <string>

#include "geomem/autodiff.hpp"
#include "geomem/config.hpp"
#include "geomem/nn.hpp"
#include "geomem/scenegen.hpp"

namespace geomem {

enum class FusionStrategy { CrossAttn, ConcatMlp, Add };

inline FusionStrategy fusion_from_string(const std::string& s) {
  if (s == "cross_attn") return FusionStrategy::CrossAttn;
  if (s == "concat_mlp") return FusionStrategy::ConcatMlp;
  if (s == "add") return FusionStrategy::Add;
  throw ConfigError("unknown fusion strategy: " + s);
}

enum class InjectionMode { Adaptive, Uniform, Off };

inline InjectionMode injection_from_string(const std::string& s) {
  if (s == "adaptive") return InjectionMode::Adaptive;
  if (s == "uniform") return InjectionMode::Uniform;
  if (s == "off") return InjectionMode::Off;
  throw ConfigError("unknown injection mode: " + s);
}

template <class S>
struct Rep3DParamsT {
  Mlp2T<S> phi;                  // sinusoidal lift -> position embedding (6B -> c)
  LinearT<S> gate_head;          // [F ; C'] -> gate logit (2c -> 1)
  LinearT<S> psi_v;              // view -> geometry width (c_v -> c_g)
  Mlp2T<S> align;                // [G ; Z_hat] -> aligned geometry (2c_g -> c_g)
  LinearT<S> psi_g;              // pooled view descriptor (c_v -> c_g)
  CrossAttentionT<S> fuse_attn;  // queries c, keys/values c_g
  LinearT<S> fuse_out;           // attention output projection (c -> c)
  Mlp2T<S> concat_mlp;           // fusion variant: [F_pa ; G_va] -> c
  LinearT<S> add_proj;           // fusion variant: G_va -> c

  Rep3DParamsT() = default;
  Rep3DParamsT(const DimsConfig& d, Rng& rng)
      // The reduced output gain keeps the injected position codes below the
      // unit-norm class directions in the token stream at init; full-strength
      // codes drown the content similarity that retrieval depends on.
      : phi(Mlp2T<S>::aligned("rep3d.phi", 6 * d.bands, d.c, d.c, 0.5)),
        gate_head("rep3d.gate_head", 2 * d.c, 1, rng),
        psi_v("rep3d.psi_v", d.c_v, d.c_g, rng),
        align("rep3d.align", 2 * d.c_g, 2 * d.c_g, d.c_g, rng),
        psi_g("rep3d.psi_g", d.c_v, d.c_g, rng),
        fuse_attn("rep3d.fuse_attn", d.c, d.c_g, d.c, d.c, rng),
        fuse_out("rep3d.fuse_out", d.c, d.c, rng),
        concat_mlp("rep3d.concat_mlp", d.c + d.c_g, d.c, d.c, rng),
        add_proj("rep3d.add_proj", d.c_g, d.c, rng) {}

  void collect(ParamList<S>& out) {
    phi.collect(out);
    gate_head.collect(out);
    psi_v.collect(out);
    align.collect(out);
    psi_g.collect(out);
    fuse_attn.collect(out);
    fuse_out.collect(out);
    concat_mlp.collect(out);
    add_proj.collect(out);
  }
};

// block mean of the point map over each patch -> per-patch 3D coordinates
template <class S>
TensorT<S> pool_pointmap(const TensorT<S>& X, const DimsConfig& d) {
  if (X.shape != Shape{d.pixel_h(), d.pixel_w(), 3})
    throw ShapeError("pool_pointmap: point map shape " + shape_str(X.shape));
  TensorT<S> C({d.h, d.w, 3});
  const S inv = S(1) / static_cast<S>(d.patch * d.patch);
  for (int i = 0; i < d.h; ++i)
    for (int j = 0; j < d.w; ++j)
      for (int k = 0; k < 3; ++k) {
        S s = S(0);
        for (int rr = i * d.patch; rr < (i + 1) * d.patch; ++rr)
          for (int cc = j * d.patch; cc < (j + 1) * d.patch; ++cc) s += X.at(rr, cc, k);
        C.at(i, j, k) = s * inv;
      }
  return C;
}

// per axis a, per band k: sin(2^k pi p_a / R), cos(2^k pi p_a / R)
template <class S>
TensorT<S> sinusoidal_encode(const TensorT<S>& C, int bands, double pos_norm) {
  if (bands < 1) throw ShapeError("sinusoidal_encode: bands must be >= 1");
  if (C.size() % 3 != 0) throw ShapeError("sinusoidal_encode: last axis must be 3");
  const int ntok = static_cast<int>(C.size() / 3);
  TensorT<S> out({ntok, 6 * bands});
  for (int t = 0; t < ntok; ++t)
    for (int a = 0; a < 3; ++a) {
      const double p = static_cast<double>(C[t * 3 + a]);
      for (int k = 0; k < bands; ++k) {
        const double arg = std::pow(2.0, k) * M_PI * p / pos_norm;
        out.at(t, (a * bands + k) * 2) = static_cast<S>(std::sin(arg));
        out.at(t, (a * bands + k) * 2 + 1) = static_cast<S>(std::cos(arg));
      }
    }
  return out;
}

// C' = phi(sinusoidal lift of C); rows are tokens
template <class S>
VarT<S> encode_position(TapeT<S>& tape, const TensorT<S>& C, Rep3DParamsT<S>& p,
                        const DimsConfig& d) {
  return p.phi.apply(tape, tape.constant(sinusoidal_encode(C, d.bands, d.pos_norm)));
}

// alpha = sigmoid(gate_head([F ; C'])), one scalar per token
template <class S>
VarT<S> compute_gate(TapeT<S>& tape, VarT<S> F, VarT<S> Cp, Rep3DParamsT<S>& p) {
  return sigmoid(p.gate_head.apply(tape, concat_cols(F, Cp)));
}

// F_pa = F + alpha .* C' (alpha broadcast over channels); uniform mode fixes
// alpha to 1 and off mode to 0
template <class S>
VarT<S> inject_position(TapeT<S>& tape, VarT<S> F, const TensorT<S>& C, Rep3DParamsT<S>& p,
                        const DimsConfig& d, InjectionMode mode, VarT<S>* gate_out = nullptr) {
  if (mode == InjectionMode::Off) return F;
  VarT<S> Cp = encode_position(tape, C, p, d);
  if (mode == InjectionMode::Uniform) return add(F, Cp);
  VarT<S> alpha = compute_gate(tape, F, Cp, p);
  if (gate_out) *gate_out = alpha;
  return add(F, mul_bcast_col(Cp, alpha));
}

// G_va = MLP([G ; psi_v(Z)]) per token
template <class S>
VarT<S> align_viewpoint(TapeT<S>& tape, VarT<S> G, VarT<S> Z, Rep3DParamsT<S>& p) {
  VarT<S> zhat = p.psi_v.apply(tape, Z);
  return p.align.apply(tape, concat_cols(G, zhat));
}

// G_vc = [G_va ; psi_g(mean over tokens of Z)] as hw+1 rows
template <class S>
VarT<S> append_global_view(TapeT<S>& tape, VarT<S> G_va, const TensorT<S>& Z,
                           Rep3DParamsT<S>& p, const DimsConfig& d) {
  TensorT<S> zbar = mean_pool(Z, {0, 1}).reshaped({1, d.c_v});
  VarT<S> global = p.psi_g.apply(tape, tape.constant(zbar));
  return concat_rows<S>({G_va, global});
}

template <class S>
VarT<S> fuse(TapeT<S>& tape, VarT<S> F_pa, VarT<S> G_vc, VarT<S> G_va, Rep3DParamsT<S>& p,
             FusionStrategy strategy) {
  switch (strategy) {
    case FusionStrategy::CrossAttn: {
      VarT<S> attended = p.fuse_attn.apply(tape, F_pa, G_vc);
      return add(F_pa, p.fuse_out.apply(tape, attended));
    }
    case FusionStrategy::ConcatMlp:
      return p.concat_mlp.apply(tape, concat_cols(F_pa, G_va));
    case FusionStrategy::Add:
      return add(F_pa, p.add_proj.apply(tape, G_va));
  }
  throw ConfigError("fuse: unknown strategy");
}

struct Rep3DOptions {
  bool enabled = true;
  InjectionMode injection = InjectionMode::Adaptive;
  FusionStrategy fusion = FusionStrategy::CrossAttn;
};

// Full per-frame pipeline: pool -> encode -> gate -> inject -> align ->
// append -> fuse. With the module disabled, H is the raw visual token grid.
template <class S>
VarT<S> rep3d_forward(TapeT<S>& tape, const FrameObservationT<S>& frame, Rep3DParamsT<S>& p,
                      const DimsConfig& d, const Rep3DOptions& opt) {
  VarT<S> F = tape.constant(frame.F.reshaped({d.tokens(), d.c}));
  if (!opt.enabled) return F;
  TensorT<S> C = pool_pointmap(frame.X, d);
  VarT<S> F_pa = inject_position(tape, F, C, p, d, opt.injection);
  VarT<S> G = tape.constant(frame.G.reshaped({d.tokens(), d.c_g}));
  VarT<S> Z = tape.constant(frame.Z.reshaped({d.tokens(), d.c_v}));
  VarT<S> G_va = align_viewpoint(tape, G, Z, p);
  VarT<S> G_vc = append_global_view(tape, G_va, frame.Z, p, d);
  return fuse(tape, F_pa, G_vc, G_va, p, opt.fusion);
}

}  // namespace geomem

#endif  // GEOMEM_REP3D_HPP_

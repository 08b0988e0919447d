//! Independent oracle for the training-memory model: a straight, one-file
//! transcription of the five memory expressions, written before and kept
//! independent of the `moeplan::memory` implementation. The acceptance
//! suite compares the two for exact integer equality.
//!
//! Quantities and conventions (shared with the implementation by
//! contract, re-derived here from scratch):
//!
//! - 16 bytes/parameter static state, 2 bytes/activation element.
//! - Per layer: attention params 4d^2 (so 64d^2 bytes), expert params
//!   3*d*f per expert (48*d*f bytes); routed experts shard over EP,
//!   shared experts replicate.
//! - Activations per layer: 12bsd + 4Hbs^2 for attention; experts get
//!   2*b*s*(k+Es)*(3f+d), sharded over EP.
//! - Every division (by EP, M, M*EP) is evaluated as an exact rational
//!   and ceiled to whole bytes at the per-layer / per-microbatch term,
//!   before scaling by integer layer and in-flight counts.
//!
//! All-MoE architectures only (num_moe_layers == num_layers), which is
//! what the expressions are defined for.

use moeplan::model::{ModelArch, TrainingRun};

fn ceil(num: u128, den: u128) -> u128 {
    num / den + u128::from(!num.is_multiple_of(den))
}

struct Sym {
    d: u128,
    l: u128,
    h: u128,
    e: u128,
    es: u128,
    k: u128,
    f: u128,
    b: u128,
    s: u128,
    m: u128,
}

fn sym(arch: &ModelArch, run: &TrainingRun) -> Sym {
    assert_eq!(
        arch.num_moe_layers, arch.num_layers,
        "oracle covers all-MoE architectures"
    );
    Sym {
        d: arch.d_model as u128,
        l: arch.num_layers as u128,
        h: arch.num_heads as u128,
        e: arch.num_experts as u128,
        es: arch.num_shared_experts as u128,
        k: arch.top_k as u128,
        f: arch.ffn_dim_moe as u128,
        b: run.global_batch as u128,
        s: run.seq_len as u128,
        m: run.num_microbatches as u128,
    }
}

/// Static bytes per layer at expert-parallel degree `ep`:
/// 64d^2 + 48*(E/EP)*d*f + 48*Es*d*f.
fn static_per_layer(y: &Sym, ep: u128) -> u128 {
    assert!(y.e.is_multiple_of(ep), "oracle requires EP | E");
    64 * y.d * y.d + 48 * (y.e / ep) * y.d * y.f + 48 * y.es * y.d * y.f
}

/// Full-batch activation bytes per layer at degree `ep`:
/// 12bsd + 4Hbs^2 + ceil(2bs(k+Es)(3f+d) / EP).
fn act_full_per_layer(y: &Sym, ep: u128) -> u128 {
    12 * y.b * y.s * y.d
        + 4 * y.h * y.b * y.s * y.s
        + ceil(2 * y.b * y.s * (y.k + y.es) * (3 * y.f + y.d), ep)
}

/// One microbatch's activation bytes per layer at degree `ep`, each term
/// ceiled independently: ceil(12bsd/M) + ceil(4Hbs^2/M)
/// + ceil(2bs(k+Es)(3f+d) / (M*EP)).
fn act_microbatch_per_layer(y: &Sym, ep: u128) -> u128 {
    ceil(12 * y.b * y.s * y.d, y.m)
        + ceil(4 * y.h * y.b * y.s * y.s, y.m)
        + ceil(2 * y.b * y.s * (y.k + y.es) * (3 * y.f + y.d), y.m * ep)
}

/// Undivided lower bound:
/// M_u = L*(64d^2 + 48Edf + 12bsd + 4Hbs^2 + 2bsk(3f+d)), extended with
/// shared experts as always-active.
pub fn undivided(arch: &ModelArch, run: &TrainingRun) -> u128 {
    let y = sym(arch, run);
    y.l * (static_per_layer(&y, 1) + act_full_per_layer(&y, 1))
}

/// Expert-data-parallel per-GPU bytes:
/// M_edp = L*(64d^2 + (48E/EP)df + 12bsd + 4Hbs^2 + (2bsk/EP)(3f+d)).
pub fn edp(arch: &ModelArch, run: &TrainingRun, ep: u64) -> u128 {
    let y = sym(arch, run);
    let ep = ep as u128;
    y.l * (static_per_layer(&y, ep) + act_full_per_layer(&y, ep))
}

/// GPipe peak per-GPU bytes: the EDP expression scaled by L/PP, with all
/// M microbatches' activations alive.
pub fn gpipe(arch: &ModelArch, run: &TrainingRun, pp: u64, ep: u64) -> u128 {
    let y = sym(arch, run);
    assert!(y.l.is_multiple_of(pp as u128), "oracle requires PP | L");
    let (pp, ep) = (pp as u128, ep as u128);
    (y.l / pp) * (static_per_layer(&y, ep) + act_full_per_layer(&y, ep))
}

/// 1F1B per-GPU bytes for stage i: static terms as GPipe, activations for
/// the (PP - i) in-flight microbatches.
pub fn ofob_stage(arch: &ModelArch, run: &TrainingRun, pp: u64, ep: u64, stage: u64) -> u128 {
    let y = sym(arch, run);
    assert!(y.l.is_multiple_of(pp as u128), "oracle requires PP | L");
    assert!(stage < pp);
    let (pp, ep, i) = (pp as u128, ep as u128, stage as u128);
    (y.l / pp) * (static_per_layer(&y, ep) + (pp - i) * act_microbatch_per_layer(&y, ep))
}

/// Stage-memory skew, closed form:
/// dM = (L/PP)*(PP-1)*(one microbatch's per-layer activations).
pub fn skew(arch: &ModelArch, run: &TrainingRun, pp: u64, ep: u64) -> u128 {
    let y = sym(arch, run);
    assert!(y.l.is_multiple_of(pp as u128), "oracle requires PP | L");
    let (pp, ep) = (pp as u128, ep as u128);
    (y.l / pp) * (pp - 1) * act_microbatch_per_layer(&y, ep)
}

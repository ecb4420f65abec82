"""Acceptance gate: the ten checks the package must clear.

Each test covers one criterion end to end, at its stated tolerance and time
budget, and prints a single PASS/FAIL line. The heavyweight shared
artifacts (trained model, 24-image corpus, 24 compressed streams) come from
the session fixtures in conftest.py.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from gicx.cli import main
from gicx.coding import RangeModel, range_decode, range_encode
from gicx.container import bits_per_pixel, pack_bitstream, unpack_bitstream
from gicx.diffusion import (SamplerConfig, ddim_sigma, make_schedule,
                            predict_x0, q_sample, sample_loop)
from gicx.guidance import (GuidanceConfig, GuidanceProxy, cfg_combine,
                           compression_gradient, fold_gradient_into_eps,
                           guided_denoise_fn, perturb_mean)
from gicx.inversion import (EmbeddingMatrix, InversionConfig,
                            embedding_utility_check, invert_embedding)
from gicx.metrics import psnr
from gicx.network import (Checkpoint, DenoiserNet, NetConfig, pool_condition,
                          predict_noise)
from gicx.pipeline import decompress_stream
from gicx.tensor import (Tensor, add, avg_pool2d, conv2d, matmul, mul,
                         no_grad, scale, scale_shift, silu, sub, tensor_mean,
                         tensor_sum, upsample2x)

from helpers import fd_error


def report(num, name, ok, detail=""):
    line = f"criterion {num:02d} {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  [{detail}]"
    print(line, flush=True)
    assert ok, line


# -- 1: analytic gradients agree with finite differences --------------------

def _graph_zoo(seed):
    rng = np.random.default_rng(seed)

    def elementwise():
        a = Tensor(rng.standard_normal((5, 7)), requires_grad=True)
        b = Tensor(rng.standard_normal((5, 7)), requires_grad=True)

        def build(p):
            mixed = mul(silu(add(p[0], p[1])), sub(scale(p[0], 0.5), p[1]))
            return tensor_mean(mixed)

        return build, [a, b]

    def projection():
        x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
        w = Tensor(rng.standard_normal((6, 3)) * 0.5, requires_grad=True)

        def build(p):
            return tensor_sum(silu(matmul(p[0], p[1])))

        return build, [x, w]

    def convolution():
        x = Tensor(rng.standard_normal((3, 6, 6)), requires_grad=True)
        w1 = Tensor(rng.standard_normal((4, 3, 3, 3)) * 0.3, requires_grad=True)
        w2 = Tensor(rng.standard_normal((2, 4, 3, 3)) * 0.3, requires_grad=True)

        def build(p):
            h = silu(conv2d(p[0], p[1], stride=1, padding=1))
            return tensor_sum(conv2d(h, p[2], stride=2, padding=1))

        return build, [x, w1, w2]

    def modulated_resampling():
        x = Tensor(rng.standard_normal((2, 4, 4)), requires_grad=True)
        s = Tensor(rng.standard_normal(2) * 0.4, requires_grad=True)
        b = Tensor(rng.standard_normal(2) * 0.4, requires_grad=True)
        y = Tensor(rng.standard_normal((2, 4, 4)))

        def build(p):
            h = scale_shift(upsample2x(avg_pool2d(p[0], 2)), p[1], p[2])
            return tensor_mean(mul(h, y))

        return build, [x, s, b]

    return [elementwise(), projection(), convolution(), modulated_resampling()]


def test_criterion_01_gradients_match_finite_differences():
    start = time.monotonic()
    worst = 0.0
    count = 0
    for seed in range(13):
        for build, params in _graph_zoo(seed):
            worst = max(worst, fd_error(build, params, probe=24, seed=seed))
            count += 1
    config = NetConfig(latent_channels=3, widths=(6, 8, 10), cond_dim=12,
                       time_dim=8, cond_hidden=16, steps=50)
    for seed in range(8):
        net = DenoiserNet(config, seed=seed)
        rng = np.random.default_rng(100 + seed)
        z = Tensor(rng.standard_normal((3, 4, 4)), requires_grad=True)
        e = Tensor(rng.standard_normal((2, 12)), requires_grad=True)
        t = int(rng.integers(1, 51))

        def build(p):
            return tensor_sum(net.forward(p[0], t, pool_condition(p[1])))

        worst = max(worst, fd_error(build, [z, e], probe=6, seed=seed))
        count += 1
    elapsed = time.monotonic() - start
    ok = worst < 1e-4 and count >= 50 and elapsed < 60
    report(1, "finite-difference gradient agreement", ok,
           f"{count} graphs, worst rel err {worst:.2e}, {elapsed:.1f}s")


# -- 2: forward/inverse identities and sampler variance ---------------------

def test_criterion_02_chain_identities_hold_at_full_depth():
    schedule = make_schedule("linear", 1000, 1e-4, 0.02)
    rng = np.random.default_rng(0)
    z0 = Tensor(rng.standard_normal((3, 8, 8)))
    worst_identity = 0.0
    with no_grad():
        for t in range(1, 1001):
            eps = Tensor(rng.standard_normal((3, 8, 8)))
            z_t = q_sample(schedule, z0, t, eps)
            x0 = predict_x0(schedule, z_t, t, eps)
            worst_identity = max(worst_identity,
                                 float(np.abs(x0.data - z0.data).max()))
    worst_var = 0.0
    for t in range(1, 1001):
        abar_t = schedule.alpha_bar_at(t)
        abar_p = schedule.alpha_bar_at(t - 1)
        posterior_var = (1.0 - abar_p) / (1.0 - abar_t) * schedule.beta[t - 1]
        stochastic_var = ddim_sigma(schedule, t, t - 1, 1.0) ** 2
        worst_var = max(worst_var, abs(stochastic_var - posterior_var))
    ok = worst_identity < 1e-10 and worst_var < 1e-12
    report(2, "noising/denoising identity and sampler variance", ok,
           f"identity {worst_identity:.2e}, variance gap {worst_var:.2e}")


# -- 3: the two guidance application routes coincide -------------------------

def test_criterion_03_guidance_routes_agree(checkpoint, corpus, compressed):
    ckpt = checkpoint
    schedule = ckpt.schedule()
    proxy = GuidanceProxy(ckpt.codec, ckpt.stats, factor=4)
    embedding = compressed[0].embedding
    reference = Tensor(np.asarray(compressed[0].x_g_hat, dtype=float))

    with no_grad():
        z0 = Tensor(ckpt.stats.standardize(
            ckpt.codec.encode(Tensor(corpus[0])).data))
    rng = np.random.default_rng(1)
    worst = 0.0
    for t in (2, 10, 50, 100, 150, 200):
        noise = Tensor(rng.standard_normal(z0.data.shape))
        z_t = q_sample(schedule, z0, t, noise)
        with no_grad():
            eps_hat = predict_noise(ckpt.net, z_t, t, embedding)
        grad = compression_gradient(proxy, schedule, z_t, t, eps_hat, reference)

        i = t - 1
        mu = (z_t.data - schedule.beta[i] / np.sqrt(1 - schedule.alpha_bar[i])
              * eps_hat.data) / np.sqrt(schedule.alpha[i])
        direct = perturb_mean(Tensor(mu), schedule, t, grad, 215.0).data
        folded = fold_gradient_into_eps(eps_hat, schedule, t, grad, 215.0)
        via_eps = (z_t.data - schedule.beta[i] / np.sqrt(1 - schedule.alpha_bar[i])
                   * folded.data) / np.sqrt(schedule.alpha[i])
        worst = max(worst, float(np.abs(direct - via_eps).max()))

    guided = guided_denoise_fn(ckpt.net, schedule,
                               GuidanceConfig(cfg_scale=0.95, comp_scale=0.0),
                               embedding, proxy, reference)

    def plain(z_t, t):
        with no_grad():
            eps_u = predict_noise(ckpt.net, z_t, t, None)
            eps_c = predict_noise(ckpt.net, z_t, t, embedding)
        return cfg_combine(eps_u, eps_c, 0.95)

    cfg = SamplerConfig(num_steps=10, eta=1.0, seed=5)
    a = sample_loop(schedule, guided, cfg, z0.data.shape)
    b = sample_loop(schedule, plain, cfg, z0.data.shape)
    bit_exact = np.array_equal(a.data, b.data)

    ok = worst < 1e-10 and bit_exact
    report(3, "noise-fold equals mean-shift, zero scale is inert", ok,
           f"route gap {worst:.2e}, inert bit-exact {bit_exact}")


# -- 4: entropy coder correctness and efficiency -----------------------------

def test_criterion_04_coder_is_lossless_and_near_entropy():
    start = time.monotonic()
    n = 1_000_000
    p = 0.1
    symbols = (np.random.default_rng(0).random(n) < p).astype(np.int64)
    data = range_encode(symbols, RangeModel(2))
    decoded = range_decode(data, n, RangeModel(2))
    lossless = np.array_equal(decoded, symbols)
    rate = len(data) * 8.0 / n
    entropy = -(p * np.log2(p) + (1 - p) * np.log2(1 - p))
    rel = abs(rate - entropy) / entropy
    elapsed = time.monotonic() - start
    ok = lossless and rel <= 0.05 and elapsed < 60
    report(4, "lossless million-symbol round trip near entropy", ok,
           f"rate {rate:.4f} vs {entropy:.4f} bits ({rel * 100:.1f}%), "
           f"{elapsed:.1f}s")


# -- 5: container stability and self-contained decode ------------------------

def test_criterion_05_container_round_trip_and_file_decode(
        checkpoint, corpus, compressed, tmp_path):
    stream = compressed[0]
    repacked = pack_bitstream(unpack_bitstream(stream.data))
    stable = repacked == stream.data

    h, w = corpus[0].shape[1:]
    bpp_ok = stream.breakdown["bpp"] == 8.0 * len(stream.data) / (h * w)
    bpp_ok = bpp_ok and bits_per_pixel(len(stream.data), h, w) == stream.breakdown["bpp"]

    gicx_path = tmp_path / "image.gicx"
    gicx_path.write_bytes(stream.data)
    ckpt_path = tmp_path / "model.gckp"
    checkpoint.save(ckpt_path)
    reloaded = Checkpoint.load(ckpt_path)
    from_files = decompress_stream(reloaded, gicx_path.read_bytes(),
                                   seed=9, num_steps=6)
    in_memory = decompress_stream(checkpoint, stream.data, seed=9, num_steps=6)
    file_decode_ok = np.array_equal(from_files.images[0], in_memory.images[0])

    ok = stable and bpp_ok and file_decode_ok
    report(5, "byte-stable container, exact bpp, file-only decode", ok,
           f"repack stable {stable}, bpp exact {bpp_ok}, "
           f"file decode {file_decode_ok}")


# -- 6: optimized embeddings beat both baselines ------------------------------

def test_criterion_06_embedding_optimization_pays_off(
        checkpoint, corpus, toy_config):
    start = time.monotonic()
    ident_before = checkpoint.ident()
    config = InversionConfig(steps=toy_config.inversion_steps,
                             lr=toy_config.inversion_lr,
                             tokens=toy_config.embed_tokens,
                             quantizer_levels=toy_config.embed_levels, seed=0)
    result = invert_embedding(checkpoint, corpus[0], config)
    ident_after = checkpoint.ident()

    init_std = checkpoint.cond_input_std if checkpoint.cond_input_std > 0 else 1.0
    shape = (config.tokens, checkpoint.net.config.cond_dim)
    e_init = EmbeddingMatrix(Tensor(
        np.random.default_rng(config.seed).normal(0.0, init_std, shape)))
    e_rand = EmbeddingMatrix(Tensor(
        np.random.default_rng(1234).normal(0.0, init_std, shape)))

    vs_init = embedding_utility_check(checkpoint, corpus[0],
                                      result.embedding, e_init,
                                      trials=256, seed=1)
    vs_rand = embedding_utility_check(checkpoint, corpus[0],
                                      result.embedding, e_rand,
                                      trials=256, seed=2)
    elapsed = time.monotonic() - start
    ok = (vs_init.passed and vs_rand.passed
          and ident_before == ident_after and elapsed < 600)
    report(6, "optimized embedding beats start and random by 5%", ok,
           f"gap vs start {vs_init.relative_gap * 100:.1f}%, vs random "
           f"{vs_rand.relative_gap * 100:.1f}%, weights frozen "
           f"{ident_before == ident_after}, {elapsed:.0f}s")


# -- 7: reconstruction quality rises with guidance strength ------------------

def _spearman(values):
    ranks = np.argsort(np.argsort(values))
    ideal = np.arange(len(values))
    n = len(values)
    d2 = float(((ranks - ideal) ** 2).sum())
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def test_criterion_07_quality_monotone_in_guidance_scale(
        checkpoint, corpus, compressed):
    start = time.monotonic()
    scales = [0.0, 25.0, 75.0, 215.0]
    count = 20
    means = []
    for s_c in scales:
        values = []
        for i in range(count):
            out = decompress_stream(checkpoint, compressed[i].data, seed=0,
                                    num_steps=20, eta=1.0, comp_scale=s_c)
            values.append(psnr(out.images[0], corpus[i]))
        means.append(float(np.mean(values)))
    rho = _spearman(np.asarray(means))
    delta = means[-1] - means[0]
    elapsed = time.monotonic() - start
    ok = rho >= 0.8 and delta >= 1.0 and elapsed < 1800
    report(7, "mean quality rises with guidance scale", ok,
           f"means {[f'{m:.2f}' for m in means]} dB, rho {rho:.2f}, "
           f"delta {delta:+.2f} dB, {elapsed:.0f}s")


# -- 8: bitrate is stable across the corpus ----------------------------------

def test_criterion_08_bitrate_stability(compressed):
    bpps = np.array([r.breakdown["bpp"] for r in compressed])
    ratio = float(bpps.std() / bpps.mean())
    ok = len(bpps) == 24 and ratio <= 0.15
    report(8, "bitrate spread within 15% of the mean", ok,
           f"{len(bpps)} images, mean {bpps.mean():.3f} bpp, "
           f"std/mean {ratio:.3f}")


# -- 9: stochastic decodes differ yet stay comparable -------------------------

def test_criterion_09_stochastic_decodes_diverse_but_consistent(
        checkpoint, corpus, compressed):
    data = compressed[0].data
    a = decompress_stream(checkpoint, data, seed=0, num_steps=20, eta=1.0)
    b = decompress_stream(checkpoint, data, seed=1, num_steps=20, eta=1.0)
    mad = float(np.abs(a.images[0] - b.images[0]).mean())
    psnr_a = psnr(a.images[0], corpus[0])
    psnr_b = psnr(b.images[0], corpus[0])
    gap = abs(psnr_a - psnr_b)
    ok = mad > 0.01 and gap <= 5.0
    report(9, "independent decodes differ but match in quality", ok,
           f"MAD {mad:.4f}, quality {psnr_a:.2f} vs {psnr_b:.2f} dB "
           f"(gap {gap:.2f})")


# -- 10: command-line runs are byte-reproducible and match frozen outputs ----

GOLDEN = Path(__file__).parent / "golden"


def _run(argv):
    rc = main(argv)
    assert rc == 0, f"exit {rc} from {argv}"


def test_criterion_10_cli_byte_reproducible_with_frozen_outputs(tmp_path):
    cfg = GOLDEN / "golden.cfg"
    model = GOLDEN / "model.gckp"

    data_a, data_b = tmp_path / "da", tmp_path / "db"
    _run(["gen-dataset", "--config", str(cfg), "--out", str(data_a)])
    _run(["gen-dataset", "--config", str(cfg), "--out", str(data_b)])
    gen_ok = all(x.read_bytes() == y.read_bytes() for x, y in
                 zip(sorted(data_a.glob("*.ppm")), sorted(data_b.glob("*.ppm"))))

    train_a, train_b = tmp_path / "ma.gckp", tmp_path / "mb.gckp"
    _run(["train", "--config", str(cfg), "--data", str(data_a),
          "--out", str(train_a)])
    _run(["train", "--config", str(cfg), "--data", str(data_a),
          "--out", str(train_b)])
    train_ok = train_a.read_bytes() == train_b.read_bytes()

    comp_a, comp_b = tmp_path / "a.gicx", tmp_path / "b.gicx"
    for out in (comp_a, comp_b):
        _run(["compress", "--config", str(cfg), "--ckpt", str(model),
              "--image", str(GOLDEN / "input.ppm"), "--out", str(out)])
    compress_ok = comp_a.read_bytes() == comp_b.read_bytes()
    golden_stream_ok = comp_a.read_bytes() == (GOLDEN / "golden.gicx").read_bytes()

    dec_a, dec_b = tmp_path / "a.ppm", tmp_path / "b.ppm"
    for out in (dec_a, dec_b):
        _run(["decompress", "--config", str(cfg), "--ckpt", str(model),
              "--input", str(GOLDEN / "golden.gicx"), "--out", str(out)])
    decompress_ok = dec_a.read_bytes() == dec_b.read_bytes()
    golden_image_ok = dec_a.read_bytes() == (GOLDEN / "golden.ppm").read_bytes()

    sweep_a, sweep_b = tmp_path / "sa.csv", tmp_path / "sb.csv"
    for out in (sweep_a, sweep_b):
        _run(["sweep", "--config", str(cfg), "--ckpt", str(model),
              "--data", str(data_a), "--sc", "0,215", "--sf", "0.95",
              "--out", str(out)])
    sweep_ok = sweep_a.read_bytes() == sweep_b.read_bytes()

    eval_a, eval_b = tmp_path / "ea.csv", tmp_path / "eb.csv"
    for out in (eval_a, eval_b):
        _run(["eval", "--config", str(cfg), "--ckpt", str(model),
              "--data", str(data_a), "--out", str(out)])
    eval_ok = eval_a.read_bytes() == eval_b.read_bytes()

    ok = (gen_ok and train_ok and compress_ok and decompress_ok and sweep_ok
          and eval_ok and golden_stream_ok and golden_image_ok)
    report(10, "deterministic commands matching frozen files", ok,
           f"repeat-identical: gen {gen_ok}, train {train_ok}, compress "
           f"{compress_ok}, decompress {decompress_ok}, sweep {sweep_ok}, "
           f"eval {eval_ok}; frozen: stream {golden_stream_ok}, "
           f"image {golden_image_ok}")

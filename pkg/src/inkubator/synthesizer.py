"""Controllable handwriting synthesizer p(x | c, z).

An autoregressive decoder writes one pen move per step. Content enters
through a monotonic Gaussian attention window over the character
embeddings; style enters through a per-step latent ``z_t`` whose diagonal
Gaussian prior is a linear function of the decoder state and window. During
training ``z_t`` comes from a bidirectional posterior encoder and the model
maximizes the per-step conditional ELBO.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import mdn
from . import numerics as N
from .ink import Alphabet, InkError, StrokeSample, extract_features, normalize
from .numerics import layers as L

log = logging.getLogger(__name__)

IN_MOVE = 3
ENC_FEATURES = 4


class SynthError(ValueError):
    pass


@dataclass
class SynthConfig:
    d_h: int = 64
    d_z: int = 4
    d_c: int = 16
    d_enc: int = 32
    J: int = 20
    K: int = 3
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    clip_norm: float = 5.0
    warmup_frac: float = 0.2
    kl_weight: float = 1.0      # final KL weight reached after warm-up
    eps_z: float = 0.1
    seed: int = 0
    langs: list | None = None

    def __post_init__(self):
        if self.d_z < 1:
            raise SynthError("d_z must be >= 1")
        for name in ("d_h", "d_c", "d_enc", "J", "K"):
            if getattr(self, name) < 1:
                raise SynthError(f"{name} must be >= 1")
        if not 0 < self.kl_weight <= 1:
            raise SynthError("kl_weight must lie in (0, 1]")


@dataclass
class PriorParams:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class StyleSource:
    """Either sample z_t from the prior or hold it near a reference style vector."""

    kind: str = "prior"
    style_vector: np.ndarray | None = None

    @classmethod
    def prior(cls) -> "StyleSource":
        return cls("prior")

    @classmethod
    def reference(cls, vector) -> "StyleSource":
        v = np.asarray(vector, dtype=np.float64)
        if not np.isfinite(v).all():
            raise SynthError("style vector must be finite")
        return cls("reference", v)


def init_params(alphabet: Alphabet, cfg: SynthConfig, rng: np.random.Generator) -> dict:
    p = {}
    Q1 = alphabet.size + 1  # characters plus separator
    p["emb"] = N.parameter(rng.normal(scale=0.5, size=(Q1, cfg.d_c)), "emb")
    L.init_lstm(p, "dec1", IN_MOVE + cfg.d_c, cfg.d_h, rng)
    L.init_linear(p, "win", cfg.d_h, 3 * cfg.K, rng, scale=0.1 / np.sqrt(cfg.d_h))
    L.init_lstm(p, "dec2", IN_MOVE + cfg.d_h + cfg.d_c, cfg.d_h, rng)
    L.init_linear(p, "prior", cfg.d_h + cfg.d_c, 2 * cfg.d_z, rng, zero=True)
    L.init_bilstm(p, "enc", ENC_FEATURES + cfg.d_c, cfg.d_enc, rng)
    L.init_linear(p, "post", 2 * cfg.d_enc, 2 * cfg.d_z, rng)
    L.init_linear(p, "out", cfg.d_h + cfg.d_c + cfg.d_z, mdn.raw_size(cfg.J), rng)
    return p


def content_indices(text: str, alphabet: Alphabet) -> list[int]:
    """Character indices with the separator (index Q) appended."""
    return alphabet.encode(text) + [alphabet.size]


def prior_step(params: dict, state, context):
    """Diagonal Gaussian prior (mean, log-std) from decoder state and window."""
    d_z = params["prior.W"].shape[1] // 2
    pr = L.linear(params, "prior", N.concat([state, context], axis=-1))
    return pr[..., :d_z], pr[..., d_z:]


def kl_diag(mu_q, logs_q, mu_p, logs_p):
    """Elementwise KL(N(mu_q, s_q^2) || N(mu_p, s_p^2))."""
    var_ratio = N.exp(N.mul(2.0, N.sub(logs_q, logs_p)))
    mean_term = N.mul(N.square(N.sub(mu_q, mu_p)), N.exp(N.mul(-2.0, logs_p)))
    return N.mul(0.5, N.sub(N.add(N.add(var_ratio, mean_term), N.mul(2.0, N.sub(logs_p, logs_q))), 1.0))


def kl_diag_numpy(mu_q, s_q, mu_p, s_p) -> np.ndarray:
    return np.log(s_p / s_q) + (s_q ** 2 + (mu_q - mu_p) ** 2) / (2 * s_p ** 2) - 0.5


# ----------------------------------------------------------------------------
# batching helpers


@dataclass
class Batch:
    moves: np.ndarray      # B, T, 3 targets
    feats: np.ndarray      # B, T, 4 encoder features
    mask: np.ndarray       # B, T
    content: np.ndarray    # B, U indices (separator-padded)
    cmask: np.ndarray      # B, U
    lengths: np.ndarray
    clen: np.ndarray       # content length M (without separator)


def make_batch(samples: Sequence[StrokeSample], alphabet: Alphabet, prepared: bool = False) -> Batch:
    if not prepared:
        samples = [normalize(s) for s in samples]
    B = len(samples)
    T = max(len(s) for s in samples)
    idx = [content_indices(s.content, alphabet) for s in samples]
    U = max(len(i) for i in idx)
    moves = np.zeros((B, T, 3))
    feats = np.zeros((B, T, ENC_FEATURES))
    mask = np.zeros((B, T), dtype=bool)
    content = np.full((B, U), alphabet.size, dtype=np.int64)
    cmask = np.zeros((B, U), dtype=bool)
    for b, (s, ci) in enumerate(zip(samples, idx)):
        n = len(s)
        moves[b, :n] = s.moves
        feats[b, :n] = extract_features(s)
        mask[b, :n] = True
        content[b, :len(ci)] = ci
        cmask[b, :len(ci)] = True
    return Batch(moves, feats, mask, content, cmask, mask.sum(axis=1), np.array([len(i) - 1 for i in idx]))


def _content_context(params, batch: Batch):
    emb = N.take(params["emb"], batch.content, axis=0)  # B, U, d_c
    cm = batch.cmask[:, :, None].astype(np.float64)
    if not batch.cmask.all():
        emb = N.mul(emb, cm)
    summary = N.div(N.tsum(emb, axis=1), cm.sum(axis=1))
    return emb, summary


def _posterior(params, batch: Batch, summary):
    B, T, _ = batch.feats.shape
    d_c = summary.shape[-1]
    summ = N.mul(N.reshape(summary, (B, 1, d_c)), np.ones((1, T, 1)))
    inp = N.concat([N.Tensor(batch.feats), summ], axis=-1)
    h = L.bilstm(params, "enc", inp, batch.mask)
    post = L.linear(params, "post", h)
    d_z = post.shape[-1] // 2
    return post[..., :d_z], post[..., d_z:]


class _Decoder:
    """Stateful per-step decoder shared by training and generation."""

    def __init__(self, params: dict, emb, cmask: np.ndarray, B: int):
        self.p = params
        H = params["dec1.Wh"].shape[0]
        d_c = params["emb"].shape[1]
        self.H, self.d_c = H, d_c
        self.K = params["win.W"].shape[1] // 3
        self.emb = emb
        self.cmask = cmask.astype(np.float64)
        U = cmask.shape[1]
        self.upos = np.arange(1, U + 1, dtype=np.float64)[None, None, :]
        self.hc1 = N.Tensor(np.zeros((B, 2 * H)))
        self.hc2 = N.Tensor(np.zeros((B, 2 * H)))
        self.w = N.Tensor(np.zeros((B, d_c)))
        self.kappa = N.Tensor(np.zeros((B, self.K)))
        W1 = params["dec1.Wx"]
        W2 = params["dec2.Wx"]
        self.W1x, self.W1w = W1[:IN_MOVE], W1[IN_MOVE:]
        self.W2x, self.W2h, self.W2w = W2[:IN_MOVE], W2[IN_MOVE:IN_MOVE + H], W2[IN_MOVE + H:]

    def project_inputs(self, prev_moves):
        """Input projections of the previous moves for both layers, (…, 4H) each."""
        x = N.as_tensor(prev_moves)
        return (N.add(N.matmul(x, self.W1x), self.p["dec1.b"]),
                N.add(N.matmul(x, self.W2x), self.p["dec2.b"]))

    def step(self, xw1, xw2, m: np.ndarray | None = None):
        p, H, K = self.p, self.H, self.K
        self.hc1 = N.lstm_step(N.add(xw1, N.matmul(self.w, self.W1w)), self.hc1, p["dec1.Wh"], m)
        h1 = self.hc1[:, :H]
        wp = N.exp(L.linear(p, "win", h1))
        alpha, beta, dk = wp[:, :K], wp[:, K:2 * K], wp[:, 2 * K:]
        if m is not None:
            dk = N.mul(dk, m)
        self.kappa = N.add(self.kappa, dk)
        B = h1.shape[0]
        diff = N.sub(N.reshape(self.kappa, (B, K, 1)), self.upos)
        phi_k = N.mul(N.reshape(alpha, (B, K, 1)),
                      N.exp(N.mul(N.neg(N.reshape(beta, (B, K, 1))), N.square(diff))))
        phi = N.mul(N.tsum(phi_k, axis=1), self.cmask)  # B, U
        self.w = N.reshape(N.matmul(N.reshape(phi, (B, 1, phi.shape[1])), self.emb), (B, self.d_c))
        z2 = N.add(N.add(xw2, N.matmul(h1, self.W2h)), N.matmul(self.w, self.W2w))
        self.hc2 = N.lstm_step(z2, self.hc2, p["dec2.Wh"], m)
        return self.hc2[:, :H], self.w


def _unroll(params, batch: Batch, emb):
    B, T, _ = batch.moves.shape
    prev = np.zeros_like(batch.moves)
    prev[:, 1:] = batch.moves[:, :-1]
    dec = _Decoder(params, emb, batch.cmask, B)
    xw1, xw2 = dec.project_inputs(prev)
    hs, ws, kappas = [], [], []
    for t in range(T):
        m = None if batch.mask[:, t].all() else batch.mask[:, t:t + 1].astype(np.float64)
        h, w = dec.step(xw1[:, t], xw2[:, t], m)
        hs.append(h)
        ws.append(w)
        kappas.append(dec.kappa.data.copy())
    return N.stack(hs, axis=1), N.stack(ws, axis=1), np.stack(kappas, axis=1)


def batch_terms(params: dict, batch: Batch, eps: np.ndarray, J: int):
    """Masked sums of reconstruction NLL and KL over a batch, plus the kappa trace."""
    emb, summary = _content_context(params, batch)
    mu_q, logs_q = _posterior(params, batch, summary)
    H2, W, kappa = _unroll(params, batch, emb)
    mu_p, logs_p = prior_step(params, H2, W)
    z = N.add(mu_q, N.mul(N.exp(logs_q), eps))
    raw = L.linear(params, "out", N.concat([H2, W, z], axis=-1))
    pos, pen = mdn.nll_tensor(raw, batch.moves, J)
    m = batch.mask.astype(np.float64)
    recon = N.tsum(N.mul(N.add(pos, pen), m))
    kl = N.tsum(N.mul(N.tsum(kl_diag(mu_q, logs_q, mu_p, logs_p), axis=-1), m))
    return recon, kl, kappa


def training_loss(params: dict, sample: StrokeSample, alphabet: Alphabet, kl_weight: float,
                  rng: np.random.Generator | None = None, eps: np.ndarray | None = None):
    """(recon_nll, kl, recon_nll + kl_weight * kl) summed over the steps of one sample."""
    batch = make_batch([sample], alphabet)
    d_z = params["prior.W"].shape[1] // 2
    J = (params["out.W"].shape[1] - 1) // 6
    if eps is None:
        eps = (rng or np.random.default_rng(0)).standard_normal((1, len(sample), d_z))
    if len(sample) < batch.clen[0]:
        log.warning("content of %d characters may not be covered in %d steps", batch.clen[0], len(sample))
    recon, kl, _ = batch_terms(params, batch, eps, J)
    total = recon if kl_weight == 0 else N.add(recon, N.mul(kl_weight, kl))
    return recon, kl, total


# ----------------------------------------------------------------------------
# style and generation


def encode_style(params: dict, reference: StrokeSample, alphabet: Alphabet) -> np.ndarray:
    """Mean posterior mean over the reference's steps."""
    if len(reference) < 2:
        raise SynthError(f"style reference {reference.id} needs at least 2 moves")
    try:
        batch = make_batch([reference], alphabet)
    except InkError as e:
        raise SynthError(f"degenerate style reference {reference.id}: {e}") from None
    with N.no_grad():
        _, summary = _content_context(params, batch)
        mu_q, _ = _posterior(params, batch, summary)
    return mu_q.data[0].mean(axis=0)


def default_t_max(n_chars: int) -> int:
    return 40 * n_chars + 50


@dataclass
class Generation:
    sample: StrokeSample
    hit_t_max: bool
    kappa: np.ndarray = field(repr=False, default=None)


def _noise(seed: int, t_max: int, d_z: int) -> dict:
    rng = np.random.default_rng(seed)
    return {
        "z": rng.standard_normal((t_max, d_z)),
        "comp": rng.random(t_max),
        "normal": rng.standard_normal((t_max, 2)),
        "pen": rng.random(t_max),
    }


def generate_batch(params: dict, texts: Sequence[str], alphabet: Alphabet, styles: Sequence[StyleSource],
                   bias: float, seeds: Sequence[int], t_max: Sequence[int] | None = None,
                   ids: Sequence[str] | None = None, eps_z: float = 0.1) -> list[Generation]:
    """Generate one sample per text; row ``i`` depends only on its inputs and ``seeds[i]``."""
    if bias < 0:
        raise SynthError("sampling bias must be >= 0")
    B = len(texts)
    for t in texts:
        if not t:
            raise SynthError("cannot generate empty content")
        alphabet.encode(t)
    d_z = params["prior.W"].shape[1] // 2
    J = (params["out.W"].shape[1] - 1) // 6
    t_max = [default_t_max(len(t)) for t in texts] if t_max is None else list(t_max)
    ids = ids or [f"gen{i}" for i in range(B)]
    noise = [_noise(s, tm, d_z) for s, tm in zip(seeds, t_max)]
    idx = [content_indices(t, alphabet) for t in texts]
    U = max(len(i) for i in idx)
    content = np.full((B, U), alphabet.size, dtype=np.int64)
    cmask = np.zeros((B, U), dtype=bool)
    for b, ci in enumerate(idx):
        content[b, :len(ci)] = ci
        cmask[b, :len(ci)] = True
    M = np.array([len(t) for t in texts], dtype=np.float64)
    ref_mask = np.array([s.kind == "reference" for s in styles])
    ref_vec = np.zeros((B, d_z))
    for b, s in enumerate(styles):
        if s.kind == "reference":
            ref_vec[b] = s.style_vector

    steps = max(t_max)
    out = np.zeros((B, steps, 3))
    kap = np.zeros((B, steps))
    length = np.zeros(B, dtype=np.int64)
    active = np.ones(B, dtype=bool)
    with N.no_grad():
        emb = N.take(params["emb"], content, axis=0)
        emb = N.mul(emb, cmask[:, :, None].astype(np.float64))
        dec = _Decoder(params, emb, cmask, B)
        prev = np.zeros((B, 3))
        for t in range(steps):
            m = active[:, None].astype(np.float64)
            xw1, xw2 = dec.project_inputs(prev)
            h, w = dec.step(xw1, xw2, None if active.all() else m)
            mu_p, logs_p = prior_step(params, h, w)
            eps = np.stack([nz["z"][min(t, len(nz["z"]) - 1)] for nz in noise])
            z = np.where(ref_mask[:, None], ref_vec + eps_z * eps,
                         mu_p.data + np.exp(logs_p.data) * eps)
            raw = L.linear(params, "out", N.concat([h, w, N.Tensor(z)], axis=-1)).data
            mix = mdn.activate(raw, bias)
            pick = [min(t, len(nz["comp"]) - 1) for nz in noise]
            dx, dy, pen = mdn.sample_from_noise(
                mix,
                np.array([nz["comp"][k] for nz, k in zip(noise, pick)]),
                np.stack([nz["normal"][k] for nz, k in zip(noise, pick)]),
                np.array([nz["pen"][k] for nz, k in zip(noise, pick)]),
            )
            step = np.stack([dx, dy, pen.astype(np.float64)], axis=1)
            out[active, t] = step[active]
            center = dec.kappa.data.mean(axis=1)
            kap[active, t] = center[active]
            length[active] += 1
            prev = step
            done = (center > M + 0.5) | (length >= np.array(t_max))
            active &= ~done
            if not active.any():
                break
    results = []
    for b in range(B):
        n = int(length[b])
        s = StrokeSample(id=ids[b], content=texts[b], moves=out[b, :n].copy(), lang="toy")
        hit = bool(n >= t_max[b] and kap[b, n - 1] <= M[b] + 0.5)
        results.append(Generation(s, hit, kap[b, :n].copy()))
    return results


def generate(params: dict, content: str, alphabet: Alphabet, style: StyleSource, bias: float, seed: int,
             t_max: int | None = None, sample_id: str = "gen", eps_z: float = 0.1) -> StrokeSample:
    return generate_batch(params, [content], alphabet, [style], bias, [seed],
                          None if t_max is None else [t_max], [sample_id], eps_z)[0].sample


# ----------------------------------------------------------------------------
# training


@dataclass
class SynthResult:
    params: dict
    history: list


def _bucketed_batches(lengths: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(len(lengths))
    pool = batch_size * 8
    batches = []
    for lo in range(0, len(perm), pool):
        chunk = perm[lo:lo + pool]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def validation_nll(params: dict, samples: Sequence[StrokeSample], alphabet: Alphabet, cfg: SynthConfig,
                   seed: int = 0, batch_size: int = 64) -> float:
    """Mean per-step reconstruction NLL with posterior samples from a fixed seed."""
    prepared = [normalize(s) for s in samples]
    rng = np.random.default_rng(seed)
    total, steps = 0.0, 0
    with N.no_grad():
        for lo in range(0, len(prepared), batch_size):
            batch = make_batch(prepared[lo:lo + batch_size], alphabet, prepared=True)
            eps = rng.standard_normal(batch.moves.shape[:2] + (cfg.d_z,))
            recon, _, _ = batch_terms(params, batch, eps, cfg.J)
            total += float(recon.data)
            steps += int(batch.mask.sum())
    return total / steps


def filter_langs(samples: Sequence[StrokeSample], langs) -> list[StrokeSample]:
    if not langs:
        return list(samples)
    return [s for s in samples if s.lang in langs]


def train_synth(train: Sequence[StrokeSample], alphabet: Alphabet, cfg: SynthConfig,
                val: Sequence[StrokeSample] | None = None) -> SynthResult:
    """Adam on the teacher-forced ELBO with linear KL warm-up."""
    train = filter_langs(train, cfg.langs)
    if not train:
        raise SynthError("empty training set")
    val = filter_langs(val or [], cfg.langs)
    prepared = [normalize(s) for s in train]
    rng = np.random.default_rng(cfg.seed)
    params = init_params(alphabet, cfg, rng)
    # start the window advancing at the data's mean characters-per-step rate
    rate = np.mean([(len(s.content) + 0.5) / len(s) for s in prepared])
    params["win.b"].data[2 * cfg.K:] = np.log(rate)

    lengths = np.array([len(s) for s in prepared])
    n_batches = -(-len(prepared) // cfg.batch_size)
    total_steps = max(1, cfg.epochs * n_batches)
    warm = max(1, int(cfg.warmup_frac * total_steps))
    hyper = N.AdamHyper(lr=cfg.lr, clip_norm=cfg.clip_norm)
    state = N.AdamState()
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        recon_sum = kl_sum = 0.0
        n_steps = 0
        for idx in _bucketed_batches(lengths, cfg.batch_size, rng):
            batch = make_batch([prepared[i] for i in idx], alphabet, prepared=True)
            eps = rng.standard_normal(batch.moves.shape[:2] + (cfg.d_z,))
            beta = cfg.kl_weight * min(1.0, step / warm)
            count = float(batch.mask.sum())
            terms = {}

            def loss_fn(p):
                recon, kl, _ = batch_terms(p, batch, eps, cfg.J)
                terms["recon"], terms["kl"] = float(recon.data), float(kl.data)
                return N.mul(1.0 / count, N.add(recon, N.mul(beta, kl)))

            try:
                _, grads = N.forward_backward(loss_fn, params)
                N.adam_step(params, grads, state, hyper)
            except N.NonFiniteError as e:
                raise SynthError(f"training diverged at epoch {epoch}, step {step}: {e}") from e
            recon_sum += terms["recon"]
            kl_sum += terms["kl"]
            n_steps += int(count)
            step += 1
        entry = {"epoch": epoch, "train_recon": recon_sum / n_steps, "train_kl": kl_sum / n_steps,
                 "beta": cfg.kl_weight * min(1.0, step / warm)}
        if val:
            entry["val_recon"] = validation_nll(params, val, alphabet, cfg)
        log.info("synth epoch %d recon %.4f kl %.4f val %s", epoch, entry["train_recon"], entry["train_kl"],
                 entry.get("val_recon"))
        history.append(entry)
    return SynthResult(params, history)


def save(path, params: dict, cfg: SynthConfig, alphabet: Alphabet, extra: dict | None = None) -> None:
    meta = {"kind": "synthesizer", "config": asdict(cfg), "alphabet": "".join(alphabet.chars)}
    meta.update(extra or {})
    N.checkpoint.save(path, L.params_to_arrays(params), meta)


def load(path):
    arrays, meta = N.checkpoint.load(path)
    if meta.get("kind") != "synthesizer":
        raise SynthError(f"{path} is not a synthesizer checkpoint")
    return L.arrays_to_params(arrays), SynthConfig(**meta["config"]), Alphabet(tuple(meta["alphabet"]))

"""Pipeline glue: latent codecs, the trainable model bundle, batched
scene sampling, and corpus evaluation.

The diffused variable is a per-agent latent vector: whitened PCA
coefficients of the canonicalized future (default), or the standardized
flat trajectory when PCA is bypassed. Both codecs rescale so the latent's
standard deviation over the data matches sigma_data, keeping the
preconditioning assumptions valid either way.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tensor as T
from .diffusion import DiffusionConfig, PreconditionedDenoiser, heun_sample, wrap_denoiser
from .errors import DataError
from .guidance import GuidanceConfig, constraint_score
from .logprob import LogProbResult, sample_logp
from .metrics import (
    DEFAULT_K,
    DEFAULT_MISS_THRESHOLD,
    DEFAULT_OVERLAP_RADIUS,
    DEFAULT_TAU,
    cluster_joint,
    constant_velocity_baseline,
    mean_sade,
    mean_sfde,
    min_sade,
    min_sfde,
    miss_rate,
    overlap_rate,
)
from .models import (
    AdamW,
    SetDenoiser,
    SetDenoiserConfig,
    load_checkpoint,
    save_checkpoint,
    train_step,
)
from .pca import PcaModel, Pose, canonicalize, pca_from_dict, pca_to_dict
from .scenes import DT, ContextEncoder, Scenario, context_features

SAMPLE_CHUNK = 16  # chains integrated together; fixed so results never depend on thread count


# ---------------------------------------------------------------------------
# Latent codecs


class PcaCodec:
    """Whitened PCA coefficients scaled by sigma_data."""

    kind = "pca"

    def __init__(self, pca: PcaModel, sigma_data: float, n_t: int, n_f: int = 2):
        self.pca = pca
        self.sigma_data = sigma_data
        self.n_t = n_t
        self.n_f = n_f

    @property
    def latent_dim(self) -> int:
        return self.pca.n_p

    def encode(self, futures: np.ndarray, poses: list[Pose]) -> np.ndarray:
        rows = [
            self.pca.transform(canonicalize(futures[i], poses[i])) for i in range(len(poses))
        ]
        return np.stack(rows) * self.sigma_data

    def decode(self, latents: np.ndarray, poses: list[Pose]) -> np.ndarray:
        coeffs = np.asarray(latents, dtype=np.float64) / self.sigma_data
        flat = coeffs @ self.pca.inverse_map.T + self.pca.mean
        trajs = flat.reshape(flat.shape[:-1] + (self.n_t, self.n_f))
        return _decanonicalize_batch(trajs, poses)

    def decode_tensor(self, latents: T.Tensor, poses: list[Pose]) -> T.Tensor:
        coeffs = T.mul(latents, 1.0 / self.sigma_data)
        flat = T.add(T.matmul(coeffs, T.Tensor(self.pca.inverse_map.T)), T.Tensor(self.pca.mean))
        trajs = T.reshape(flat, flat.shape[:-1] + (self.n_t, self.n_f))
        return _decanonicalize_batch_t(trajs, poses)

    def to_config(self) -> dict:
        return {
            "kind": self.kind,
            "sigma_data": self.sigma_data,
            "n_t": self.n_t,
            "n_f": self.n_f,
            "pca": pca_to_dict(self.pca),
        }


class RawCodec:
    """Standardized flat trajectories (the PCA-bypass ablation)."""

    kind = "raw"

    def __init__(self, mean: np.ndarray, std: float, sigma_data: float, n_t: int, n_f: int = 2):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = float(std)
        self.sigma_data = sigma_data
        self.n_t = n_t
        self.n_f = n_f

    @classmethod
    def fit(cls, population: np.ndarray, sigma_data: float, n_t: int, n_f: int = 2) -> "RawCodec":
        flat = population.reshape(population.shape[0], -1)
        mean = flat.mean(axis=0)
        std = float(flat.std())
        if std <= 0:
            raise DataError("trajectory population has zero variance")
        return cls(mean=mean, std=std, sigma_data=sigma_data, n_t=n_t, n_f=n_f)

    @property
    def latent_dim(self) -> int:
        return self.mean.shape[0]

    def encode(self, futures: np.ndarray, poses: list[Pose]) -> np.ndarray:
        rows = [canonicalize(futures[i], poses[i]).ravel() for i in range(len(poses))]
        return (np.stack(rows) - self.mean) / self.std * self.sigma_data

    def decode(self, latents: np.ndarray, poses: list[Pose]) -> np.ndarray:
        flat = np.asarray(latents, dtype=np.float64) / self.sigma_data * self.std + self.mean
        trajs = flat.reshape(flat.shape[:-1] + (self.n_t, self.n_f))
        return _decanonicalize_batch(trajs, poses)

    def decode_tensor(self, latents: T.Tensor, poses: list[Pose]) -> T.Tensor:
        flat = T.add(T.mul(latents, self.std / self.sigma_data), T.Tensor(self.mean))
        trajs = T.reshape(flat, flat.shape[:-1] + (self.n_t, self.n_f))
        return _decanonicalize_batch_t(trajs, poses)

    def to_config(self) -> dict:
        return {
            "kind": self.kind,
            "sigma_data": self.sigma_data,
            "n_t": self.n_t,
            "n_f": self.n_f,
            "mean": self.mean.tolist(),
            "std": self.std,
        }


def codec_from_config(doc: dict):
    kind = doc.get("kind")
    if kind == "pca":
        return PcaCodec(
            pca=pca_from_dict(doc["pca"]),
            sigma_data=doc["sigma_data"],
            n_t=doc["n_t"],
            n_f=doc["n_f"],
        )
    if kind == "raw":
        return RawCodec(
            mean=np.array(doc["mean"]),
            std=doc["std"],
            sigma_data=doc["sigma_data"],
            n_t=doc["n_t"],
            n_f=doc["n_f"],
        )
    raise DataError(f"unknown codec kind {kind!r}")


def _pose_rotations(poses: list[Pose]) -> tuple[np.ndarray, np.ndarray]:
    rots = np.stack(
        [
            np.array(
                [
                    [math.cos(math.pi / 2 - p.heading), -math.sin(math.pi / 2 - p.heading)],
                    [math.sin(math.pi / 2 - p.heading), math.cos(math.pi / 2 - p.heading)],
                ]
            )
            for p in poses
        ]
    )
    offsets = np.array([[p.x, p.y] for p in poses])
    return rots, offsets


def _decanonicalize_batch(trajs: np.ndarray, poses: list[Pose]) -> np.ndarray:
    # (..., N_a, N_t, 2) agent frames -> scene frame
    rots, offsets = _pose_rotations(poses)
    return np.matmul(trajs, rots) + offsets[:, None, :]


def _decanonicalize_batch_t(trajs: T.Tensor, poses: list[Pose]) -> T.Tensor:
    rots, offsets = _pose_rotations(poses)
    return T.add(T.matmul(trajs, T.Tensor(rots)), T.Tensor(offsets[:, None, :]))


# ---------------------------------------------------------------------------
# Model bundle


class SceneDenoiser:
    """Denoiser bound to one scene's context tokens; broadcasts over chains."""

    def __init__(self, precond: PreconditionedDenoiser, tokens: np.ndarray):
        self.precond = precond
        self.tokens = tokens  # (N_a, N_c, d_ctx)

    def _ctx(self, batch: int) -> np.ndarray:
        return np.broadcast_to(self.tokens[None], (batch,) + self.tokens.shape)

    def denoise(self, x: np.ndarray, ctx, sigma: float) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            return self.precond.denoise(x[None], self._ctx(1), sigma)[0]
        return self.precond.denoise(x, self._ctx(x.shape[0]), sigma)

    def denoise_tensor(self, x: T.Tensor, ctx, sigma: float) -> T.Tensor:
        return self.precond.denoise_tensor(x, T.Tensor(self._ctx(x.shape[0]).copy()), sigma)


@dataclass
class SceneSamples:
    latents: np.ndarray  # (N, N_a, D)
    trajectories: np.ndarray  # (N, N_a, N_t, 2), scene frame


class TrajectoryModel:
    """Codec + context encoder + set denoiser + diffusion config."""

    def __init__(
        self,
        codec,
        arch: SetDenoiserConfig,
        diffusion: DiffusionConfig,
        seed: int = 0,
    ):
        self.codec = codec
        self.arch = replace(arch, d_in=codec.latent_dim)
        self.diffusion = diffusion
        self.seed = seed
        self.net = SetDenoiser(self.arch, seed=seed)
        self.encoder = ContextEncoder(
            n_tokens=arch.n_ctx_tokens, d_ctx=arch.d_ctx, seed=seed + 1
        )
        self.params: dict[str, T.Tensor] = {**self.net.params, **self.encoder.params}

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        config = {
            "arch": asdict(self.arch),
            "diffusion": asdict(self.diffusion),
            "codec": self.codec.to_config(),
            "seed": self.seed,
        }
        named = {name: p.data for name, p in self.params.items()}
        named["fourier.freqs"] = self.net.freqs
        save_checkpoint(path, config, named)

    @classmethod
    def load(cls, path) -> "TrajectoryModel":
        config, tensors = load_checkpoint(path)
        codec = codec_from_config(config["codec"])
        model = cls(
            codec=codec,
            arch=SetDenoiserConfig(**config["arch"]),
            diffusion=DiffusionConfig(**config["diffusion"]),
            seed=config.get("seed", 0),
        )
        model.net.freqs = tensors.pop("fourier.freqs")
        for name, arr in tensors.items():
            if name not in model.params:
                raise DataError(f"checkpoint tensor {name!r} not in model")
            if model.params[name].data.shape != arr.shape:
                raise DataError(
                    f"checkpoint tensor {name!r} has shape {arr.shape}, "
                    f"model expects {model.params[name].data.shape}"
                )
            model.params[name].data = arr
        return model

    # -- sampling ------------------------------------------------------------

    def scene_denoiser(self, scenario: Scenario) -> SceneDenoiser:
        tokens = self.encoder.encode(scenario)
        return SceneDenoiser(wrap_denoiser(self.net, self.diffusion), tokens)

    def make_guidance(self, scenario: Scenario, gcfg: GuidanceConfig):
        """Guidance hook evaluating constraint costs on decoded scene-frame
        trajectories, differentiated through the denoiser and codec."""
        poses = scenario.poses()
        scene_d = self.scene_denoiser(scenario)

        def guide(x: np.ndarray, sigma: float) -> np.ndarray:
            return constraint_score(
                x, None, sigma, scene_d, gcfg, decode=lambda t: self.codec.decode_tensor(t, poses)
            )

        return guide

    def sample_scene(
        self,
        scenario: Scenario,
        num_samples: int,
        seed: int,
        steps: int | None = None,
        guidance_cfg: GuidanceConfig | None = None,
        threads: int = 1,
    ) -> SceneSamples:
        cfg = self.diffusion if steps is None else self.diffusion.with_steps(steps)
        scene_d = self.scene_denoiser(scenario)
        guide = None
        if guidance_cfg is not None and any(s.lam > 0 for s in guidance_cfg.specs):
            guide = self.make_guidance(scenario, guidance_cfg)
        n_a, d = scenario.n_agents, self.codec.latent_dim

        # One rng per chain via seed-splitting: chunking (fixed size) and the
        # thread count never change what any chain computes.
        children = np.random.SeedSequence(seed).spawn(num_samples)
        inits = np.stack(
            [np.random.default_rng(c).standard_normal((n_a, d)) for c in children]
        ) * cfg.sigma_max

        def run_chunk(lo: int) -> np.ndarray:
            chunk = inits[lo : lo + SAMPLE_CHUNK]
            return heun_sample(scene_d, None, None, cfg, guidance=guide, x_init=chunk)

        starts = list(range(0, num_samples, SAMPLE_CHUNK))
        if threads > 1 and len(starts) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(run_chunk, starts))
        else:
            parts = [run_chunk(lo) for lo in starts]
        latents = np.concatenate(parts, axis=0)
        trajs = self.codec.decode(latents, scenario.poses())
        return SceneSamples(latents=latents, trajectories=trajs)

    # -- log probability ------------------------------------------------------

    def logp_scene_samples(
        self,
        scenario: Scenario,
        latents: np.ndarray,
        estimator: str = "exact",
        probes: int = 100,
        seed: int = 0,
        threads: int = 1,
    ) -> list[LogProbResult]:
        scene_d = self.scene_denoiser(scenario)
        children = np.random.SeedSequence(seed).spawn(len(latents))

        def one(i: int) -> LogProbResult:
            rng = np.random.default_rng(children[i])
            return sample_logp(
                latents[i], scene_d, None, self.diffusion, estimator=estimator, probes=probes, rng=rng
            )

        if threads > 1 and len(latents) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return list(pool.map(one, range(len(latents))))
        return [one(i) for i in range(len(latents))]

    def encode_scenario(self, scenario: Scenario) -> np.ndarray:
        return self.codec.encode(scenario.futures(), scenario.poses())


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainResult:
    model: TrajectoryModel
    losses: list[float]


def build_codec(
    scenarios: list[Scenario],
    pca: PcaModel | None,
    sigma_data: float,
    use_pca: bool = True,
) -> PcaCodec | RawCodec:
    n_t = scenarios[0].agents[0].future.shape[0]
    if use_pca:
        if pca is None:
            raise DataError("PCA codec requested but no PCA model given")
        return PcaCodec(pca=pca, sigma_data=sigma_data, n_t=n_t)
    pop = np.stack(
        [canonicalize(a.future, a.pose) for sc in scenarios for a in sc.agents]
    )
    return RawCodec.fit(pop, sigma_data=sigma_data, n_t=n_t)


def train_model(
    scenarios: list[Scenario],
    codec,
    steps: int,
    seed: int,
    arch: SetDenoiserConfig | None = None,
    diffusion: DiffusionConfig | None = None,
    batch_size: int = 16,
    lr: float = 1e-3,
    weight_decay: float = 0.03,
    warmup_steps: int = 200,
) -> TrainResult:
    """Train denoiser and context encoder jointly on a scenario corpus.

    Scenarios are bucketed by agent count so every batch stacks cleanly;
    buckets are drawn with probability proportional to their size.
    """
    if not scenarios:
        raise DataError("empty training corpus")
    diffusion = diffusion or DiffusionConfig()
    arch = arch or SetDenoiserConfig()
    model = TrajectoryModel(codec=codec, arch=arch, diffusion=diffusion, seed=seed)

    buckets: dict[int, list[int]] = {}
    for idx, sc in enumerate(scenarios):
        buckets.setdefault(sc.n_agents, []).append(idx)
    latents = [model.encode_scenario(sc) for sc in scenarios]
    feats = [context_features(sc) for sc in scenarios]

    keys = sorted(buckets)
    weights = np.array([len(buckets[k]) for k in keys], dtype=np.float64)
    weights /= weights.sum()

    opt = AdamW(
        model.params,
        lr=lr,
        weight_decay=weight_decay,
        warmup_steps=warmup_steps,
        total_steps=steps,
    )
    rng = np.random.default_rng(seed)
    losses = []
    for _ in range(steps):
        key = keys[int(rng.choice(len(keys), p=weights))]
        idxs = rng.choice(buckets[key], size=batch_size, replace=True)
        clean = np.stack([latents[i] for i in idxs])
        feat = np.stack([feats[i] for i in idxs])
        losses.append(train_step(model.net, model.encoder, opt, clean, feat, diffusion, rng))
    return TrainResult(model=model, losses=losses)


# ---------------------------------------------------------------------------
# Evaluation


def evaluate_corpus(
    model: TrajectoryModel,
    scenarios: list[Scenario],
    num_samples: int = 64,
    k: int = DEFAULT_K,
    tau: float = DEFAULT_TAU,
    miss_threshold: float = DEFAULT_MISS_THRESHOLD,
    overlap_radius: float = DEFAULT_OVERLAP_RADIUS,
    seed: int = 0,
    threads: int = 1,
    guidance_cfg: GuidanceConfig | None = None,
) -> dict:
    """Sample, cluster, and score every scenario; returns the metrics report.

    min metrics are over the K clustered joint predictions, mean metrics
    over the raw samples (before clustering), overlap over the most likely
    cluster. The constant-velocity baseline is evaluated on the same scenes.
    """
    if not scenarios:
        raise DataError("empty evaluation corpus")
    rows = []

    def eval_scene(args) -> dict:
        idx, sc = args
        scene_seed = int(np.random.SeedSequence([seed, idx]).generate_state(1)[0])
        result = model.sample_scene(
            sc, num_samples=num_samples, seed=scene_seed, guidance_cfg=guidance_cfg
        )
        gt = sc.futures()
        clustered = cluster_joint(result.trajectories, k=k, tau=tau)
        cv = constant_velocity_baseline(
            np.stack([a.history for a in sc.agents]), gt.shape[1], DT
        )
        return {
            "minSADE": min_sade(clustered.trajectories, gt),
            "minSFDE": min_sfde(clustered.trajectories, gt),
            "meanSADE": mean_sade(result.trajectories, gt),
            "meanSFDE": mean_sfde(result.trajectories, gt),
            "missRate": miss_rate(clustered.trajectories, gt, miss_threshold),
            "overlap": overlap_rate(clustered.most_likely, overlap_radius),
            "cvMinSADE": min_sade(cv[None], gt),
            "sampleOverlap": float(
                np.mean([overlap_rate(traj, overlap_radius) for traj in result.trajectories])
            ),
        }

    items = list(enumerate(scenarios))
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(eval_scene, items))
    else:
        rows = [eval_scene(it) for it in items]

    report = {key: float(np.mean([r[key] for r in rows])) for key in rows[0]}
    report["numScenes"] = len(scenarios)
    report["numSamples"] = num_samples
    report["sr"] = {}
    return report


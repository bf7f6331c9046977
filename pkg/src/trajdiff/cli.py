"""Command-line pipeline: gen-data, fit-pca, train, sample, logprob, eval, serve.

Every command is a pure function of its flags: all randomness derives from
--seed, artifacts are written with sorted keys and no timestamps, so a
rerun with identical flags produces byte-identical files. Each artifact
embeds the effective config, the root seed, and a build id.

Exit codes: 0 ok, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import functools
import json
import os
import subprocess
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .diffusion import DiffusionConfig
from .engine import TrajectoryModel, build_codec, evaluate_corpus, train_model
from .errors import DataError, NumericError
from .guidance import guidance_from_json
from .metrics import (
    DEFAULT_K,
    DEFAULT_MISS_THRESHOLD,
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
from .models import SetDenoiserConfig
from .pca import canonicalize, fit_pca, load_pca, save_pca
from .scenes import (
    DT,
    LAYOUTS,
    SceneParams,
    Scenario,
    generate_scenario,
    read_corpus,
    regenerate_from_id,
    scenario_from_dict,
    scenario_to_dict,
    write_corpus,
)

ARTIFACT_FORMAT_VERSION = 1
EXIT_DATA_ERROR = 3
EXIT_NUMERIC_ERROR = 4


@functools.lru_cache(maxsize=1)
def build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            cwd=Path(__file__).parent,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except OSError:
        pass
    return f"v{__version__}"


def run_meta(seed: int, config: dict) -> dict:
    return {
        "format_version": ARTIFACT_FORMAT_VERSION,
        "build_id": build_id(),
        "seed": seed,
        "config": config,
    }


def write_json(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def emit_summary(doc: dict) -> None:
    click.echo(json.dumps(doc, sort_keys=True, separators=(",", ":")))


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DataError as exc:
            click.echo(json.dumps({"error": "data", "message": str(exc)}), err=True)
            sys.exit(EXIT_DATA_ERROR)
        except NumericError as exc:
            click.echo(json.dumps({"error": "numeric", "message": str(exc)}), err=True)
            sys.exit(EXIT_NUMERIC_ERROR)

    return wrapper


@click.group()
def main():
    """Guided diffusion engine for multi-agent 2D trajectories."""


@main.command("gen-data")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--scenes", type=click.IntRange(min=1), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--layout", type=click.Choice(LAYOUTS), default="intersection", show_default=True)
@click.option("--agents", type=click.IntRange(2, 8), default=None, help="Fixed agent count (default: 2-4 mix).")
@handle_errors
def cmd_gen_data(out, scenes, seed, layout, agents):
    """Generate a synthetic scenario corpus (JSONL)."""
    params = SceneParams(layout=layout, n_agents=agents)
    root = np.random.default_rng(seed)
    scenario_seeds = root.integers(0, 2**62, size=scenes)
    corpus = [generate_scenario(int(s), params) for s in scenario_seeds]
    write_corpus(out, corpus)
    config = {"scenes": scenes, "layout": layout, "agents": agents, "out": str(out)}
    write_json(str(out) + ".meta.json", run_meta(seed, config))
    emit_summary({"command": "gen-data", "scenes": len(corpus), "out": str(out), **run_meta(seed, config)})


@main.command("fit-pca")
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--components", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--max-population", type=int, default=10_000, show_default=True)
@handle_errors
def cmd_fit_pca(corpus, components, out, max_population):
    """Fit whitened PCA on canonicalized future trajectories."""
    scenarios = read_corpus(corpus)
    trajs = [canonicalize(a.future, a.pose) for sc in scenarios for a in sc.agents]
    population = np.stack(trajs[:max_population])
    model = fit_pca(population, components)
    save_pca(model, out)
    doc = json.load(open(out, encoding="utf-8"))
    doc["run"] = run_meta(0, {"corpus": str(corpus), "components": components})
    write_json(out, doc)
    emit_summary(
        {
            "command": "fit-pca",
            "out": str(out),
            "population": int(population.shape[0]),
            "cumulative_explained_variance": float(np.cumsum(model.explained_variance_ratio)[-1]),
            **run_meta(0, {"corpus": str(corpus), "components": components}),
        }
    )


@main.command("train")
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--pca", "pca_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--steps", type=click.IntRange(min=1), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--no-pca", is_flag=True, help="Diffuse standardized raw trajectories (ablation).")
@click.option("--no-self-attention", is_flag=True, help="Denoise agents independently (ablation).")
@click.option("--batch-size", type=click.IntRange(min=1), default=16, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--blocks", type=int, default=2, show_default=True)
@handle_errors
def cmd_train(corpus, pca_path, steps, seed, out, no_pca, no_self_attention, batch_size, lr, width, blocks):
    """Train the set denoiser and context encoder; writes checkpoint + loss CSV."""
    if no_pca and pca_path:
        raise click.UsageError("--no-pca cannot be combined with --pca")
    if not no_pca and not pca_path:
        raise click.UsageError("either --pca PATH or --no-pca is required")
    scenarios = read_corpus(corpus)
    pca_model = load_pca(pca_path) if pca_path else None
    diffusion = DiffusionConfig()
    codec = build_codec(scenarios, pca_model, diffusion.sigma_data, use_pca=not no_pca)
    arch = SetDenoiserConfig(
        d_in=codec.latent_dim,
        d_model=width,
        n_blocks=blocks,
        self_attention=not no_self_attention,
    )
    result = train_model(
        scenarios,
        codec,
        steps=steps,
        seed=seed,
        arch=arch,
        diffusion=diffusion,
        batch_size=batch_size,
        lr=lr,
    )
    config = {
        "corpus": str(corpus),
        "pca": str(pca_path) if pca_path else None,
        "steps": steps,
        "no_pca": no_pca,
        "no_self_attention": no_self_attention,
        "batch_size": batch_size,
        "lr": lr,
        "width": width,
        "blocks": blocks,
        "run": run_meta(seed, {}),
    }
    result.model.save(out)
    doc = json.load(open(out, encoding="utf-8"))
    doc["config"]["train"] = config
    write_json(out, doc)
    loss_path = str(out) + ".loss.csv"
    with open(loss_path, "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for i, value in enumerate(result.losses):
            fh.write(f"{i},{value!r}\n")
    emit_summary(
        {
            "command": "train",
            "out": str(out),
            "loss_curve": loss_path,
            "final_loss": result.losses[-1],
            "mean_last_100": float(np.mean(result.losses[-100:])),
            **run_meta(seed, config),
        }
    )


def _resolve_scenario(scene_id: str, corpus_path) -> Scenario:
    if corpus_path:
        for sc in read_corpus(corpus_path):
            if sc.scenario_id == scene_id:
                return sc
        raise DataError(f"scenario {scene_id!r} not found in {corpus_path}")
    return regenerate_from_id(scene_id)


def _load_constraints(text: str | None, scenario: Scenario):
    if not text:
        return None
    if text.strip().startswith("{"):
        doc = json.loads(text)
    else:
        try:
            with open(text, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read constraints {text!r}: {exc}") from exc
    n_t = scenario.agents[0].future.shape[0]
    return guidance_from_json(doc, n_agents=scenario.n_agents, n_t=n_t)


@main.command("sample")
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--scene-id", required=True)
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Resolve --scene-id here; omitted: regenerate from the id.")
@click.option("--num-samples", type=click.IntRange(1, 4096), default=64, show_default=True)
@click.option("--steps", type=click.IntRange(min=2), default=None, help="Sampling steps (default: config).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--constraints", default=None, help="Guidance JSON (inline or a file path).")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--threads", type=int, default=os.cpu_count(), show_default="machine parallelism")
@handle_errors
def cmd_sample(ckpt, scene_id, corpus, num_samples, steps, seed, constraints, out, threads):
    """Sample joint futures for one scene; writes trajectories + latents."""
    model = TrajectoryModel.load(ckpt)
    scenario = _resolve_scenario(scene_id, corpus)
    gcfg = _load_constraints(constraints, scenario)
    result = model.sample_scene(
        scenario, num_samples=num_samples, seed=seed, steps=steps, guidance_cfg=gcfg, threads=threads
    )
    config = {
        "ckpt": str(ckpt),
        "scene_id": scene_id,
        "num_samples": num_samples,
        "steps": steps or model.diffusion.num_steps,
        "constraints": json.loads(json.dumps(constraints)) if constraints else None,
    }
    doc = {
        "run": run_meta(seed, config),
        "scenario": scenario_to_dict(scenario),
        "samples": result.trajectories.tolist(),
        "latents": result.latents.tolist(),
    }
    write_json(out, doc)
    emit_summary({"command": "sample", "out": str(out), "num_samples": num_samples, **run_meta(seed, config)})


@main.command("logprob")
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--samples", "samples_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--hutchinson", type=click.IntRange(min=1), default=None,
              help="Probe count for the stochastic trace estimator (default: exact trace).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--threads", type=int, default=os.cpu_count(), show_default="machine parallelism")
@handle_errors
def cmd_logprob(ckpt, samples_path, hutchinson, seed, out, threads):
    """Exact (or Hutchinson) log probability of previously sampled futures."""
    model = TrajectoryModel.load(ckpt)
    try:
        with open(samples_path, encoding="utf-8") as fh:
            doc = json.load(fh)
        scenario = scenario_from_dict(doc["scenario"])
        latents = np.asarray(doc["latents"], dtype=np.float64)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed samples file {samples_path}: {exc}") from exc
    estimator = "hutchinson" if hutchinson else "exact"
    results = model.logp_scene_samples(
        scenario, latents, estimator=estimator, probes=hutchinson or 100, seed=seed, threads=threads
    )
    config = {"ckpt": str(ckpt), "samples": str(samples_path), "estimator": estimator, "probes": hutchinson}
    payload = {
        "run": run_meta(seed, config),
        "scenario_id": scenario.scenario_id,
        "estimator": estimator,
        "logp": [r.logp for r in results],
        "prior_logp": [r.prior_logp for r in results],
        "divergence_integral": [r.divergence_integral for r in results],
    }
    if out:
        write_json(out, payload)
    emit_summary(
        {
            "command": "logprob",
            "out": str(out) if out else None,
            "logp": payload["logp"],
            **run_meta(seed, config),
        }
    )


@main.command("eval")
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--k", type=click.IntRange(min=1), default=DEFAULT_K, show_default=True)
@click.option("--tau", type=float, default=DEFAULT_TAU, show_default=True)
@click.option("--num-samples", type=click.IntRange(min=1), default=64, show_default=True)
@click.option("--miss-threshold", type=float, default=DEFAULT_MISS_THRESHOLD, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--predictor", type=click.Choice(["model", "gt", "cv"]), default="model", show_default=True,
              help="gt/cv replace the model with ground truth or constant velocity (sanity baselines).")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--threads", type=int, default=os.cpu_count(), show_default="machine parallelism")
@handle_errors
def cmd_eval(ckpt, corpus, k, tau, num_samples, miss_threshold, seed, predictor, out, threads):
    """Clustered joint metrics over an evaluation corpus."""
    if num_samples < k:
        raise click.UsageError(f"--num-samples ({num_samples}) must be >= --k ({k})")
    scenarios = read_corpus(corpus)
    config = {
        "ckpt": str(ckpt),
        "corpus": str(corpus),
        "k": k,
        "tau": tau,
        "num_samples": num_samples,
        "miss_threshold": miss_threshold,
        "predictor": predictor,
    }
    if predictor == "model":
        model = TrajectoryModel.load(ckpt)
        report = evaluate_corpus(
            model,
            scenarios,
            num_samples=num_samples,
            k=k,
            tau=tau,
            miss_threshold=miss_threshold,
            seed=seed,
            threads=threads,
        )
    else:
        rows = []
        for sc in scenarios:
            gt = sc.futures()
            if predictor == "gt":
                preds = gt[None]
            else:
                preds = constant_velocity_baseline(
                    np.stack([a.history for a in sc.agents]), gt.shape[1], DT
                )[None]
            rows.append(
                {
                    "minSADE": min_sade(preds, gt),
                    "minSFDE": min_sfde(preds, gt),
                    "meanSADE": mean_sade(preds, gt),
                    "meanSFDE": mean_sfde(preds, gt),
                    "missRate": miss_rate(preds, gt, miss_threshold),
                    "overlap": overlap_rate(preds[0]),
                }
            )
        report = {key: float(np.mean([r[key] for r in rows])) for key in rows[0]}
        report["numScenes"] = len(scenarios)
        report["numSamples"] = 1
        report["sr"] = {}
    payload = {"run": run_meta(seed, config), **report}
    if out:
        write_json(out, payload)
    emit_summary({"command": "eval", "out": str(out) if out else None, **payload})


@main.command("serve")
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--pca", "pca_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Optional: cross-check against the checkpoint's embedded codec.")
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--cors-origin", default=None, help="Allow this origin (the composer UI).")
@handle_errors
def cmd_serve(ckpt, pca_path, corpus, port, host, cors_origin):
    """Long-running HTTP service over sampling, guidance, and log probability."""
    import uvicorn

    from .service import build_service

    app = build_service(ckpt, pca_path=pca_path, corpus_path=corpus, cors_origin=cors_origin)
    emit_summary({"command": "serve", "port": port, "host": host, **run_meta(0, {"ckpt": str(ckpt)})})
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()

"""Experiment orchestration: one configuration, several seeds, artifacts.

Per seed: a metrics CSV (streamed, so partial logs survive crashes) and a
parameter checkpoint.  A manifest records the configuration echo and the
content hashes of every artifact; a FAILED marker is left next to the
partial artifacts when a seed aborts.  Wall-clock timing goes only into
the manifest unless the configuration opts into per-row timing, keeping
metrics files byte-identical across reruns.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .agent import run_training
from .config import ExperimentConfig
from .metrics import MetricsWriter

__all__ = ["run_experiment", "seed_artifacts", "limit_blas_threads"]

OUTPUT_ROOT_ENV = "MIRO_OUTPUT_ROOT"


def limit_blas_threads(n: int = 1) -> None:
    """Small GEMMs dominate here; BLAS threading is a measured slowdown and
    breaks per-process reproducibility expectations.  Parallelism belongs
    at the seed level (separate processes)."""
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(n, "blas")
    except Exception:
        os.environ.setdefault("OMP_NUM_THREADS", str(n))
        os.environ.setdefault("OPENBLAS_NUM_THREADS", str(n))


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def seed_artifacts(run_dir: Path, seed: int) -> dict:
    return {
        "metrics": run_dir / f"metrics_seed{seed}.csv",
        "checkpoint": run_dir / f"params_seed{seed}.ckpt",
    }


def _run_one_seed(config: ExperimentConfig, seed: int, run_dir_str: str) -> dict:
    limit_blas_threads(1)
    run_dir = Path(run_dir_str)
    paths = seed_artifacts(run_dir, seed)
    start = time.perf_counter()
    clock = (lambda: (time.perf_counter() - start) * 1000.0) if config.timing == "real" else None
    writer = MetricsWriter(
        paths["metrics"], config.run_id(), seed, config.variant, config.env.distractors
    )
    try:
        run_training(
            env_config=config.env,
            dims=config.model,
            planner_config=config.planner,
            schedule=config.schedule,
            variant=config.variant,
            lam1=config.lam1,
            lam2=config.lam2,
            seed=seed,
            sink=writer,
            checkpoint_path=paths["checkpoint"],
            clock=clock,
        )
    finally:
        writer.close()
    return {"seed": seed, "wall_s": time.perf_counter() - start}


def resolve_run_dir(config: ExperimentConfig) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV, config.output_dir)
    return Path(root) / config.run_id()


def run_experiment(config: ExperimentConfig, jobs: int = 1, config_echo: str | None = None) -> int:
    """Execute every seed; returns a process exit status (0 = all seeds ok).

    ``jobs`` > 1 runs seeds as separate processes; results are identical to
    sequential execution because seeds never share state.
    """
    run_dir = resolve_run_dir(config)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(config_echo if config_echo is not None else repr(config) + "\n")

    statuses = {}
    timings = {}
    failures = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                seed: pool.submit(_run_one_seed, config, seed, str(run_dir))
                for seed in config.seeds
            }
            for seed, fut in futures.items():
                try:
                    timings[seed] = fut.result()["wall_s"]
                    statuses[seed] = "ok"
                except Exception:
                    statuses[seed] = "failed"
                    failures[seed] = traceback.format_exc()
    else:
        limit_blas_threads(1)
        for seed in config.seeds:
            try:
                timings[seed] = _run_one_seed(config, seed, str(run_dir))["wall_s"]
                statuses[seed] = "ok"
            except Exception:
                statuses[seed] = "failed"
                failures[seed] = traceback.format_exc()

    if failures:
        marker = run_dir / "FAILED"
        marker.write_text(
            "\n\n".join(f"seed {seed}:\n{tb}" for seed, tb in sorted(failures.items()))
        )

    manifest = {
        "run_id": config.run_id(),
        "variant": config.variant,
        "task": config.env.task,
        "distractors": config.env.distractors,
        "seeds": list(config.seeds),
        "status": statuses,
        "wall_seconds": {str(s): round(t, 3) for s, t in timings.items()},
        "artifacts": {},
        "config_sha256": _sha256(run_dir / "config.txt"),
    }
    for seed in config.seeds:
        for kind, path in seed_artifacts(run_dir, seed).items():
            if path.exists():
                manifest["artifacts"][path.name] = _sha256(path)
    with open(run_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0 if not failures else 1

"""Wall-clock comparison of generative decoding vs teacher simulation.

The interesting property is scaling: decoder cost is independent of the fibre
count baked into the conditions, while the teacher's cost grows with it.
"""

from __future__ import annotations

import csv
import time
from dataclasses import replace

import numpy as np
import torch

from .conditions import ConditionRanges, PhysioConditions, normalize_conditions
from .model import BioMimeModel
from .preprocess import preprocess
from .teacher import CylinderConfig, build_motor_unit, simulate_muap


def throughput_bench(
    model: BioMimeModel,
    cfg: CylinderConfig,
    n_muaps: int = 6,
    n_conditions: int = 4,
    fibre_counts: tuple[int, ...] = (120, 260, 400),
    repeats: int = 3,
    seed: int = 0,
    ranges: ConditionRanges | None = None,
) -> dict:
    """Time (a) decoding and (b) teacher-simulating n_muaps x n_conditions
    MUAPs at each fibre count; per-MUAP medians over `repeats` runs."""
    ranges = ranges or ConditionRanges()
    velocities = np.linspace(*ranges.velocity, n_conditions)
    base = PhysioConditions()
    per_batch = n_muaps * n_conditions

    settings = []
    for nf in fibre_counts:
        conds = [replace(base, fibre_count=int(nf), velocity_mps=float(v)) for v in velocities]
        geoms = [build_motor_unit(cfg, conds[0], seed + i, ranges) for i in range(n_muaps)]
        settings.append((int(nf), conds, geoms))

    # Repeats are interleaved round-robin across the fibre-count settings so
    # shared-machine load fluctuations hit every setting alike, then reduced
    # with the median. Teacher and generative phases stay separate to avoid
    # cache pollution.
    preprocess(simulate_muap(settings[0][2][0], settings[0][1][0], cfg))  # warm the JIT
    teacher_times: dict[int, list[float]] = {nf: [] for nf, _, _ in settings}
    for _ in range(repeats):
        for nf, conds, geoms in settings:
            t0 = time.perf_counter()
            for geom in geoms:
                for cond in conds:
                    preprocess(simulate_muap(geom, cond, cfg))
            teacher_times[nf].append(time.perf_counter() - t0)

    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(n_muaps, model.cfg.latent_dim, generator=gen, dtype=model.cfg.torch_dtype)
    cvec_table = {
        nf: [
            torch.from_numpy(np.tile(normalize_conditions(c, ranges), (n_muaps, 1))).to(
                model.cfg.torch_dtype
            )
            for c in conds
        ]
        for nf, conds, _ in settings
    }
    generative_times: dict[int, list[float]] = {nf: [] for nf, _, _ in settings}
    with torch.no_grad():
        model.decode(z, cvec_table[settings[0][0]][0])  # warm-up
        for _ in range(repeats):
            for nf, _, _ in settings:
                t0 = time.perf_counter()
                for cv in cvec_table[nf]:
                    model.decode(z, cv)
                generative_times[nf].append(time.perf_counter() - t0)

    rows = [
        {
            "fibre_count": nf,
            "teacher_s_per_muap": float(np.median(teacher_times[nf])) / per_batch,
            "generative_s_per_muap": float(np.median(generative_times[nf])) / per_batch,
        }
        for nf, _, _ in settings
    ]

    teacher_total = sum(r["teacher_s_per_muap"] for r in rows) * per_batch
    generative_total = sum(r["generative_s_per_muap"] for r in rows) * per_batch
    gen_times = [r["generative_s_per_muap"] for r in rows]
    return {
        "muaps_per_setting": per_batch,
        "rows": rows,
        "teacher_total_s": teacher_total,
        "generative_total_s": generative_total,
        "speedup_ratio": teacher_total / generative_total,
        "generative_spread": (max(gen_times) - min(gen_times)) / min(gen_times),
        "teacher_monotone_in_fibres": all(
            b["teacher_s_per_muap"] > a["teacher_s_per_muap"] for a, b in zip(rows, rows[1:])
        ),
    }


def write_bench_csv(report: dict, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["fibre_count", "teacher_s_per_muap", "generative_s_per_muap"])
        w.writeheader()
        w.writerows(report["rows"])


def format_bench_text(report: dict) -> str:
    lines = [
        f"MUAPs per setting: {report['muaps_per_setting']}",
        f"{'fibres':>8} {'teacher s/MUAP':>16} {'generative s/MUAP':>20}",
    ]
    for r in report["rows"]:
        lines.append(
            f"{r['fibre_count']:>8} {r['teacher_s_per_muap']:>16.6f} {r['generative_s_per_muap']:>20.6f}"
        )
    lines += [
        f"teacher total: {report['teacher_total_s']:.3f} s",
        f"generative total: {report['generative_total_s']:.3f} s",
        f"speedup ratio (teacher/generative): {report['speedup_ratio']:.2f}x",
        f"generative per-MUAP spread across fibre counts: {report['generative_spread'] * 100:.1f}%",
        f"teacher cost monotone in fibre count: {report['teacher_monotone_in_fibres']}",
    ]
    return "\n".join(lines)

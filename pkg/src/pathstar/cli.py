"""Command line: ``pathstar gen|solve|eval|count``.

Exit codes: 0 success, 1 usage or constraint error, 2 validity failure in
strict mode.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .chc import clever_hans, teacher_forced_eval
from .graph import GraphError, count_instances, sample_instance
from .solvers import SOLVERS, PreconditionError, SolverInput, check_preconditions, run_solver
from .tokenizer import (
    DatasetHeader,
    PermMode,
    QPosition,
    TargetVariant,
    TokenizationOptions,
    TokenizeError,
    detokenize,
    read_dataset,
    structured_expand,
    tokenize,
)

EXIT_OK, EXIT_USAGE, EXIT_INVALID = 0, 1, 2
SPLIT_STREAM = {"train": 0, "test": 1}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with 2, which means "invalid" here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class RunConfig:
    D: int = 2
    M: int = 5
    vocab_size: int = 100
    num_samples: int = 1000
    num_test: int = 0
    options: TokenizationOptions = TokenizationOptions()
    structured: int = 0
    seed: int = 0
    workers: int = 1


def _sample_rng(seed: int, split: str, i: int) -> np.random.Generator:
    # one independent stream per (seed, split, index): output does not depend on sharding
    return np.random.default_rng([seed, SPLIT_STREAM[split], i])


def _make_group(cfg: RunConfig, split: str, i: int, banned: frozenset = frozenset()) -> list[str]:
    rng = _sample_rng(cfg.seed, split, i)
    while True:
        inst = sample_instance(cfg.vocab_size, cfg.D, cfg.M, rng)
        if cfg.structured:
            samples = structured_expand(inst, cfg.structured, rng, cfg.options)
        else:
            samples = [tokenize(inst, cfg.options, rng)]
        if not any((s.instance.graph, s.instance.target) in banned for s in samples):
            return [detokenize(s) for s in samples]


def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


class _GroupJob:
    def __init__(self, cfg: RunConfig, split: str, banned: frozenset = frozenset()):
        self.cfg, self.split, self.banned = cfg, split, banned

    def __call__(self, i: int) -> list[str]:
        return _make_group(self.cfg, self.split, i, self.banned)


def generate(cfg: RunConfig, split: str = "train", banned: frozenset = frozenset()) -> list[str]:
    """Header plus one line per sample; structured siblings stay adjacent."""
    n = cfg.num_samples if split == "train" else cfg.num_test
    header = DatasetHeader(cfg.D, cfg.M, cfg.vocab_size, cfg.options, cfg.seed, cfg.structured, split)
    groups = _pmap(_GroupJob(cfg, split, banned), list(range(n)), cfg.workers)
    return [header.render()] + [line for g in groups for line in g]


def _instance_keys(lines: list[str]) -> frozenset:
    _, samples = read_dataset(lines)
    return frozenset((s.instance.graph, s.instance.target) for s in samples)


def _write(path: str | None, lines: list[str]) -> None:
    text = "\n".join(lines) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_gen(args) -> int:
    opts = TokenizationOptions(
        perm_mode=PermMode(args.perm),
        q_position=QPosition(args.q_pos),
        target_variant=TargetVariant(args.variant),
        edge_marker_count=args.markers,
        include_bos_eos=not args.no_bos_eos,
    )
    if args.structured and not 1 <= args.structured <= args.D - 1:
        raise UsageError(f"S must be <= D-1 (got S={args.structured}, D={args.D})")
    cfg = RunConfig(
        D=args.D,
        M=args.M,
        vocab_size=args.vocab,
        num_samples=args.n,
        num_test=args.test_n,
        options=opts,
        structured=args.structured,
        seed=args.seed,
        workers=args.workers,
    )
    train = generate(cfg, "train")
    _write(args.out, train)
    if args.test_n:
        if not args.test_out:
            raise UsageError("--test-n needs --test-out")
        banned = _instance_keys(train)
        _write(args.test_out, generate(cfg, "test", banned))
    return EXIT_OK


def _load(path: str):
    text = sys.stdin.read() if path == "-" else Path(path).read_text()
    return read_dataset(text.splitlines())


class _SolveJob:
    def __init__(self, name: str):
        self.name = name

    def __call__(self, sample) -> tuple[bool, int, int]:
        rep = run_solver(self.name, SolverInput.from_sample(sample), sample.instance)
        return rep.valid, rep.kqv_count, rep.loop_iterations


def cmd_solve(args) -> int:
    header, samples = _load(args.input)
    if not samples:
        raise UsageError("dataset has no samples")
    in_regime = check_preconditions(args.solver, SolverInput.from_sample(samples[0]))
    if not in_regime:
        print(
            f"warning: {args.solver} is outside its regime on {header.options.perm_mode.value}-wise data; "
            "validity failures will not fail the run",
            file=sys.stderr,
        )
    results = _pmap(_SolveJob(args.solver), samples, args.workers)
    n = len(results)
    n_valid = sum(v for v, _, _ in results)
    kqvs = [k for _, k, _ in results]
    iters = sorted({it for _, _, it in results})
    lines = [
        f"solver={args.solver}",
        f"samples={n}",
        f"valid={n_valid}",
        f"validity_rate={n_valid / n:.6f}",
        f"kqv_min={min(kqvs)}",
        f"kqv_max={max(kqvs)}",
        f"loop_iterations={','.join(map(str, iters))}",
        f"in_regime={int(in_regime)}",
    ]
    detail = [f"sample={i} valid={int(v)} kqv={k} iterations={it}" for i, (v, k, it) in enumerate(results)]
    _write(args.out, lines + detail) if args.out else None
    print("\n".join(lines))
    if args.strict and in_regime and n_valid < n:
        return EXIT_INVALID
    return EXIT_OK


def cmd_eval(args) -> int:
    _, samples = _load(args.input)
    rep = teacher_forced_eval(
        clever_hans(predict_target_at_end=args.predict_target_at_end),
        samples,
        np.random.default_rng(args.seed),
    )
    print(rep.render_table())
    print()
    print(rep.render_kv())
    if args.out:
        _write(args.out, [rep.render_kv()])
    return EXIT_OK


def cmd_count(args) -> int:
    print(count_instances(args.vocab, args.D, args.M))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pathstar", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def shape(sp):
        sp.add_argument("--D", type=int, default=2, help="number of arms")
        sp.add_argument("--M", type=int, default=5, help="arm length including the start node")
        sp.add_argument("--vocab", type=int, default=100, help="number of node ids")

    g = sub.add_parser("gen", help="generate a dataset file")
    shape(g)
    g.add_argument("--n", type=int, default=1000, help="number of (base) samples")
    g.add_argument("--perm", choices=[m.value for m in PermMode], default="edge")
    g.add_argument("--q-pos", choices=[q.value for q in QPosition], default="end")
    g.add_argument("--variant", choices=[v.value for v in TargetVariant], default="forward")
    g.add_argument("--markers", type=int, choices=(1, 2), default=1)
    g.add_argument("--structured", type=int, default=0, metavar="S", help="extra targets per graph")
    g.add_argument("--no-bos-eos", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="-")
    g.add_argument("--test-n", type=int, default=0, help="also write a disjoint test split")
    g.add_argument("--test-out")
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="run a RASP solver over a dataset")
    s.add_argument("--solver", choices=sorted(SOLVERS), required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out")
    s.add_argument("--no-strict", dest="strict", action="store_false")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("eval", help="teacher-forced Clever-Hans evaluation")
    e.add_argument("--input", required=True)
    e.add_argument("--out")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--predict-target-at-end", action="store_true")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("count", help="number of (graph, target) pairs")
    shape(c)
    c.set_defaults(func=cmd_count)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, GraphError, TokenizeError, PreconditionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

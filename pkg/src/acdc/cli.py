"""Command line driver: ``acdc train | plan | aggregates | fd-check``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from .catalog import DEFAULT_MAX_ITERS, MODEL_KINDS, Catalog, load_config, validate_catalog
from .errors import AcdcError, ConfigError, StorageError
from .planner import annotate_vorder, build_registers, describe_plan, enumerate_aggregates, \
    enumerate_components

log = logging.getLogger("acdc")


class ConfigNotFound(ConfigError):
    pass


class DataNotFound(StorageError):
    pass


def _configure_logging() -> None:
    level = os.environ.get("ACDC_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _load(path: str) -> Catalog:
    try:
        return load_config(path)
    except OSError as exc:
        raise ConfigNotFound(f"cannot read config {path}: {exc.strerror or exc}") from None


def _apply_overrides(catalog: Catalog, args: argparse.Namespace) -> Catalog:
    changes = {}
    model = catalog.model
    if getattr(args, "model", None) and args.model != model.kind:
        changes["kind"] = args.model
        changes["degree"] = MODEL_KINDS[args.model]
        changes["max_iters"] = DEFAULT_MAX_ITERS[args.model]
        if args.model == "fama" and model.rank is None:
            changes["rank"] = 8
    for attr, key in (("rank", "rank"), ("lam", "lam"), ("seed", "seed"),
                      ("max_iters", "max_iters"), ("tolerance", "tolerance")):
        value = getattr(args, attr, None)
        if value is not None:
            changes[key] = value
    if getattr(args, "use_fd", False):
        changes["use_fd"] = True
    return catalog.with_model(**changes) if changes else catalog


def _prepare(args: argparse.Namespace):
    from .pipeline import prepare
    catalog = _apply_overrides(_load(args.config), args)
    try:
        return prepare(catalog, delimiter=args.delimiter)
    except FileNotFoundError as exc:
        raise DataNotFound(str(exc)) from None


def _write(text: str, target: str | None) -> None:
    if target is None or target == "-":
        sys.stdout.write(text)
    else:
        Path(target).write_text(text)


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


def cmd_train(args: argparse.Namespace) -> int:
    from .pipeline import model_document, report_document, train
    prepared = _prepare(args)
    trained = train(prepared)
    _write(_dumps(model_document(trained)), args.out)
    report = report_document(trained, timings=args.timings)
    if args.report:
        _write(_dumps(report), args.report)
    log.info("trained %s: %d iterations, J=%.12g", report["model"], report["iterations"],
             report["finalJ"])
    return 0


def cmd_plan(args: argparse.Namespace) -> int:
    catalog = validate_catalog(_apply_overrides(_load(args.config), args))
    vorder = annotate_vorder(catalog.vorder, catalog.relations)
    comps = enumerate_components(catalog, vorder)
    response = None if args.no_response else catalog.response.name
    plan = enumerate_aggregates(comps, response, catalog.kinds, vorder)
    registers = build_registers(vorder, plan.monomials, catalog.kinds)
    sys.stdout.write(describe_plan(registers, plan) + "\n")
    return 0


def _format_key(dictionary, group_by, key) -> str:
    return "(" + ",".join(dictionary.label(v, k) for v, k in zip(group_by, key)) + ")"


def cmd_aggregates(args: argparse.Namespace) -> int:
    prepared = _prepare(args)
    out = []
    for mono in prepared.plan.monomials:
        amap = prepared.root[mono]
        for key, payload in amap.items():
            out.append(f"{mono}\t{_format_key(prepared.dictionary, amap.group_by, key)}\t{payload!r}")
    sys.stdout.write("\n".join(out) + ("\n" if out else ""))
    return 0


def cmd_fd_check(args: argparse.Namespace) -> int:
    args.use_fd = True
    if getattr(args, "model", None) is None:
        args.model = "lr"
    prepared = _prepare(args)
    for g in prepared.fd.groups:
        sizes = ", ".join(f"{c}:{len(g.maps[c])}" for c in g.determined)
        diag = " ".join(f"{x:g}" for x in g.B.diagonal())
        sys.stdout.write(f"{g.determinant}\tdomain={len(g.domain)}\tdetermined[{sizes}]\t"
                         f"diag(B)=[{diag}]\n")
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    from .oracle import active_domains, brute_force_aggregate, dense_gram, materialize_join
    prepared = _prepare(args)
    join = materialize_join(prepared.relations)
    kinds = prepared.catalog.kinds
    sys.stdout.write(f"join\t{join.count}\n")
    for mono in prepared.plan.monomials:
        gb = prepared.plan.group_by[mono]
        for key, payload in sorted(brute_force_aggregate(join, mono, gb).items()):
            sys.stdout.write(f"{mono}\t{_format_key(prepared.dictionary, gb, key)}\t{payload!r}\n")
    dense = dense_gram(join, prepared.components, prepared.catalog.response.name,
                       active_domains(join, kinds))
    sys.stdout.write(f"dense\t{dense.index.size}\tsY={dense.sY!r}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acdc", description=(
        "Train regression models over a normalized database by factorized aggregates."))
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="configuration JSON document")
        p.add_argument("--delimiter", default=",", help="CSV delimiter (default ',')")
        p.add_argument("--model", choices=sorted(MODEL_KINDS), help="override the model kind")

    train = sub.add_parser("train", help="train a model and write its parameters")
    common(train)
    train.add_argument("--rank", type=int)
    train.add_argument("--lambda", dest="lam", type=float)
    train.add_argument("--seed", type=int)
    train.add_argument("--max-iters", dest="max_iters", type=int)
    train.add_argument("--tolerance", type=float)
    train.add_argument("--use-fd", dest="use_fd", action="store_true")
    train.add_argument("--out", help="model output file (default: stdout)")
    train.add_argument("--report", help="run report output file")
    train.add_argument("--timings", action="store_true",
                       help="include wall-clock timings in the report")
    train.set_defaults(func=cmd_train)

    plan = sub.add_parser("plan", help="print register sizes and aggregate monomials")
    common(plan)
    plan.add_argument("--no-response", action="store_true",
                      help="plan feature aggregates only")
    plan.set_defaults(func=cmd_plan)

    aggs = sub.add_parser("aggregates", help="dump every root aggregate")
    common(aggs)
    aggs.set_defaults(func=cmd_aggregates)

    fd = sub.add_parser("fd-check", help="verify FDs and print B diagonals")
    common(fd)
    fd.set_defaults(func=cmd_fd_check)

    oracle = sub.add_parser("oracle")
    common(oracle)
    oracle.set_defaults(func=cmd_oracle)
    # keep the debugging command out of the help listing
    sub._choices_actions = [a for a in sub._choices_actions if a.dest != "oracle"]
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AcdcError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

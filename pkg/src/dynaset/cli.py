"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 partial success.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from dynaset.core import DEFAULT_COARSE_SUBJECTS, DEFAULT_MANIFEST_NAME, ConfigError, Label, PromptSet, load_config, read_manifest
from dynaset.embeddings import load_vectors
from dynaset.imgproc.noise import NoiseKind, NoiseSpec
from dynaset.llm import FixtureLlm, HttpChatLlm, llm_prompts
from dynaset.metrics import AuditError, audit, write_report
from dynaset.pipeline import Formulator, expected_image_count, postprocess_dataset
from dynaset.prompt import (
    AnimacyLexicon,
    LlmQuery,
    caption_prompts,
    captions_for_label,
    diversify,
    load_lexicon,
    naive_prompt,
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("dynaset")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, ensure_ascii=False))


def _label(args) -> Label:
    try:
        return Label(args.label, args.context)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_prompts_gen(args) -> int:
    label = _label(args)
    if args.strategy == "naive":
        ps = PromptSet(label, (naive_prompt(label),))
        if args.count > 1:
            log.warning("the naive template yields a single prompt; --count %d ignored", args.count)
    elif args.strategy == "llm":
        if args.llm_fixture:
            backend = FixtureLlm.from_file(args.llm_fixture)
        elif args.llm_endpoint:
            backend = HttpChatLlm(args.llm_endpoint, model=args.llm_model, token_env=args.llm_token_env)
        else:
            raise UsageError("--strategy llm needs --llm-fixture or --llm-endpoint")
        query = LlmQuery(args.llm_template, args.count) if args.llm_template else LlmQuery(count=args.count)
        ps = llm_prompts(backend, label, query)
    else:
        if not args.captions:
            raise UsageError("--strategy caption needs --captions")
        subjects = [s.strip() for s in args.coarse_subjects.split(",") if s.strip()]
        ps = caption_prompts(captions_for_label(args.captions, label), label, subjects)
        ps = PromptSet(label, ps.prompts[: args.count])
    _print_json(ps.to_dict())
    return EXIT_OK


def cmd_prompts_diversify(args) -> int:
    label = _label(args)
    store = load_vectors(args.vectors)
    lex = load_lexicon(args.lexicon) if args.lexicon else AnimacyLexicon()
    base = naive_prompt(label) if args.base == "naive" else None
    _print_json(diversify(store, lex, label, base).to_dict())
    return EXIT_OK


def cmd_formulate(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.backend:
        overrides["backend"] = args.backend
    if args.max_in_flight is not None:
        overrides["max_in_flight"] = args.max_in_flight
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = replace(cfg, **overrides)
    formulator = Formulator(cfg)
    out = Path(args.out)
    if args.retry_failed:
        manifest = formulator.retry_failed(out, args.retry_failed)
    else:
        manifest = formulator.formulate(out)
    print(out / DEFAULT_MANIFEST_NAME)
    missing = expected_image_count(cfg) - len(manifest.entries)
    if missing > 0:
        log.warning("%d images failed; see %s", missing, out / "errors.jsonl")
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_postprocess(args) -> int:
    try:
        params = {"kind": NoiseKind.parse(args.noise), "seed": args.seed}
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    for flag, name in (
        ("amount", "amount"),
        ("variance", "variance"),
        ("kernel", "kernel_size"),
        ("sigma", "sigma"),
        ("mean", "mean"),
        ("salt_fraction", "salt_fraction"),
        ("var_map", "var_map_path"),
    ):
        value = getattr(args, flag)
        if value is not None:
            params[name] = value
    try:
        spec = NoiseSpec(**params)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    n = postprocess_dataset(args.input, spec, args.output)
    print(json.dumps({"written": n, "noise": spec.to_dict()}))
    return EXIT_OK


def cmd_audit(args) -> int:
    manifest = read_manifest(args.manifest) if args.manifest else None
    report = audit(
        args.dataset,
        manifest=manifest,
        resize_to=args.resize,
        sample_pairs=args.sample_pairs,
        seed=args.seed,
        pairs_csv=args.pairs_csv,
    )
    write_report(report, args.out)
    print(args.out)
    return EXIT_PARTIAL if report.unreadable else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dynaset", description="Formulate and audit synthetic image-classification datasets.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    prompts = sub.add_parser("prompts", help="generate prompt sets")
    psub = prompts.add_subparsers(dest="prompts_command", required=True, parser_class=_Parser)

    gen = psub.add_parser("gen", help="generate prompts for one label and print them as JSON")
    gen.add_argument("--label", required=True, help="class name")
    gen.add_argument("--context", help="disambiguating context word appended by the naive template")
    gen.add_argument("--strategy", choices=("naive", "llm", "caption"), default="naive", help="prompt strategy")
    gen.add_argument("--count", type=int, default=10, help="number of prompts to request / keep (default 10)")
    gen.add_argument("--captions", help="captions file (one per line, optional TAB filename) or directory of <label>.txt")
    gen.add_argument(
        "--coarse-subjects",
        default=",".join(DEFAULT_COARSE_SUBJECTS),
        help="comma-separated coarse subjects replaced by the label (default: %(default)s)",
    )
    gen.add_argument("--llm-fixture", help="JSON file of recorded query -> response pairs")
    gen.add_argument("--llm-endpoint", help="chat-completions URL")
    gen.add_argument("--llm-model", default="gpt-3.5-turbo", help="model name sent to the endpoint")
    gen.add_argument("--llm-token-env", default="DYNASET_LLM_TOKEN", help="environment variable holding the bearer token")
    gen.add_argument("--llm-template", help="query template; must contain {class} once, may contain {count}")
    gen.set_defaults(func=cmd_prompts_gen)

    div = psub.add_parser("diversify", help="label variants with animacy-appropriate modifiers")
    div.add_argument("--label", required=True, help="class name")
    div.add_argument("--context", help="context word (used with --base naive)")
    div.add_argument("--vectors", required=True, help="word2vec text-format vector file")
    div.add_argument("--lexicon", help="JSON lexicon overriding the default word and modifier lists")
    div.add_argument("--base", choices=("label", "naive"), default="label",
                     help="diversify the bare label or the naive prompt (default: label)")
    div.set_defaults(func=cmd_prompts_diversify)

    form = sub.add_parser("formulate", help="run the formulation pipeline")
    form.add_argument("--config", required=True, help="JSON formulation config")
    form.add_argument("--out", required=True, help="output dataset directory")
    form.add_argument("--backend", choices=("mock", "http"), help="override the config's backend")
    form.add_argument("--max-in-flight", type=int, help="maximum concurrent generation requests")
    form.add_argument("--seed", type=int, help="override the config seed (config default 0)")
    form.add_argument("--retry-failed", metavar="ERRORLOG", help="re-request only the images listed in this error log")
    form.set_defaults(func=cmd_formulate)

    post = sub.add_parser("postprocess", help="apply a noise technique to every image of a dataset")
    post.add_argument("--noise", required=True, help="one of: " + ", ".join(k.value for k in NoiseKind))
    post.add_argument("--amount", type=float, help="salt/pepper corruption probability (default 0.05)")
    post.add_argument("--variance", type=float, help="noise variance on the [0,1] scale (default 0.01)")
    post.add_argument("--kernel", type=int, help="blur kernel size, odd >= 3 (default 5)")
    post.add_argument("--sigma", type=float, help="blur sigma (default derived from kernel size)")
    post.add_argument("--mean", type=float, help="gaussian noise mean (default 0)")
    post.add_argument("--salt-fraction", type=float, help="share of salt among salt-and-pepper hits (default 0.5)")
    post.add_argument("--var-map", help=".npy per-pixel variance map for localvar noise")
    post.add_argument("--seed", type=int, default=0, help="noise seed (default 0)")
    post.add_argument("--in", dest="input", required=True, help="input dataset directory")
    post.add_argument("--out", dest="output", required=True, help="output dataset directory")
    post.set_defaults(func=cmd_postprocess)

    aud = sub.add_parser("audit", help="SSIM and colorfulness diversity report")
    aud.add_argument("--dataset", required=True, help="class-per-folder dataset directory")
    aud.add_argument("--manifest", help="manifest listing the images (default: scan class folders)")
    aud.add_argument("--resize", type=int, default=224, help="square side images are resized to (default 224)")
    aud.add_argument("--sample-pairs", type=int, help="estimate class SSIM from K random pairs")
    aud.add_argument("--seed", type=int, default=0, help="pair-sampling seed (default 0)")
    aud.add_argument("--pairs-csv", help="also write every per-pair SSIM value to this CSV")
    aud.add_argument("--out", required=True, help="report JSON path")
    aud.set_defaults(func=cmd_audit)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"dynaset: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AuditError, OSError, ValueError, RuntimeError) as exc:
        print(f"dynaset: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

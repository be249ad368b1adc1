"""Command-line wiring for the full pipeline.

Subcommands: synth, guides, decompose, train-codebook, tokenize,
detokenize, serialize, parse, train, sample, export-obj. Every command
exits 0 on success and prints one machine-parseable ``error: <code>:
<message>`` line on failure; outputs are written atomically so failures
never leave partial files.

Exit codes: 2 usage, 3 missing file, 4 hash mismatch, 5 parse/validation
error, 1 anything else.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

import strandlang.grammar as grammar
import strandlang.model as armodel
from strandlang import dense, pipeline, quantize, synth
from strandlang.guides import GuideConfig, extract_guides, load_guide_set
from strandlang.hair import read_hair, write_hair
from strandlang.ioutil import Reader, atomic_write_bytes, pack_f32, pack_u32
from strandlang.profiles import get_profile
from strandlang.spectral import decompose

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_HASH_MISMATCH = 4
EXIT_PARSE = 5

DECOMP_MAGIC = b"HDCP"


class CliError(Exception):
    def __init__(self, exit_code: int, code: str, message: str):
        super().__init__(message)
        self.exit_code = exit_code
        self.code = code


def _require_file(path) -> str:
    if not os.path.exists(path):
        raise CliError(EXIT_MISSING_FILE, "missing-file", f"no such file: {path}")
    return path


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def cmd_synth(args):
    profile = get_profile(args.profile)
    spec = synth.StyleFamily(
        family=args.family,
        strand_count=args.strands,
        seed=args.seed,
    )
    style = synth.generate_hairstyle(spec, L=profile.strand_length)
    write_hair(args.out, style)
    print(f"wrote {args.out} ({len(style)} strands, L={profile.strand_length})")


def cmd_guides(args):
    profile = get_profile(args.profile)
    style = read_hair(_require_file(args.input))
    n_guide = args.n_guide or profile.n_guide
    config = GuideConfig(k_feat=profile.k_feat, n_guide=n_guide, seed=args.seed)
    guide_set = extract_guides(style, config)
    from strandlang.guides import save_guide_set

    save_guide_set(args.out_dir, guide_set)
    print(f"wrote {args.out_dir} ({len(guide_set.guides)} guides)")


def cmd_decompose(args):
    profile = get_profile(args.profile)
    style = read_hair(_require_file(args.input))
    k_geo = args.k_geo or profile.k_geo
    L = len(style.strands[0])
    parts = [DECOMP_MAGIC, pack_u32(1, len(style.strands), L, k_geo)]
    for s in style.strands:
        backbone, residual = decompose(s, k_geo)
        parts.append(pack_f32([s.root_uv.u, s.root_uv.v]))
        parts.append(pack_f32(backbone.points))
        parts.append(pack_f32(residual.residuals))
    atomic_write_bytes(args.out, b"".join(parts))
    print(f"wrote {args.out} ({len(style.strands)} decompositions, k_geo={k_geo})")


def read_decomposition(path):
    """Read a decomposition cache; returns (k_geo, roots_uv, backbones, residuals)."""
    with open(path, "rb") as fh:
        rd = Reader(fh.read(), name=str(path))
    rd.magic(DECOMP_MAGIC)
    version, count, L, k_geo = rd.u32(), rd.u32(), rd.u32(), rd.u32()
    if version != 1:
        raise ValueError(f"unsupported decomposition version {version}")
    roots, backbones, residuals = [], [], []
    for _ in range(count):
        roots.append(rd.f32(2))
        backbones.append(np.array(rd.f32(3 * L)).reshape(L, 3))
        residuals.append(np.array(rd.f32(3 * L)).reshape(L, 3))
    rd.done()
    return k_geo, np.array(roots), backbones, residuals


def _load_codebooks(args, need=("coarse", "style", "density")):
    books = {}
    if "coarse" in need:
        books["coarse"] = quantize.read_pq_codebook(_require_file(args.coarse_codebook))
    if "style" in need:
        books["style"] = quantize.read_pq_codebook(_require_file(args.style_codebook))
    if "density" in need:
        books["density"] = quantize.read_density_codebook(
            _require_file(args.density_codebook)
        )
    return books


def cmd_train_codebook(args):
    profile = get_profile(args.profile)
    guide_set = load_guide_set(_require_file(args.guides))
    k_defaults = {
        "coarse": profile.k_coarse,
        "style": profile.k_style,
        "density": profile.k_density,
    }
    k = args.k or k_defaults[args.kind]
    if args.kind == "density":
        book = quantize.train_density_codebook([guide_set.density], k=k, seed=args.seed)
        quantize.write_density_codebook(args.out, book)
    else:
        feats = []
        for g in guide_set.guides:
            backbone, residual = decompose(g, profile.k_geo)
            component = backbone if args.kind == "coarse" else residual
            feats.append(quantize.strand_to_feature(component))
        cfg = quantize.PQTrainConfig(
            ema_decay=profile.ema_decay,
            iterations=profile.pq_iterations,
            seed=args.seed,
        )
        book = quantize.train_pq_codebook(np.stack(feats), k=k, config=cfg)
        quantize.write_pq_codebook(args.out, book)
    print(f"wrote {args.out} ({args.kind} codebook, K={k})")


def cmd_tokenize(args):
    profile = get_profile(args.profile)
    guide_set = load_guide_set(_require_file(args.guides))
    books = _load_codebooks(args)
    strands, density = pipeline.tokenize_guides(
        guide_set, books["coarse"], books["style"], books["density"], profile.k_geo
    )
    pipeline.save_tokens_json(args.out, strands, density)
    print(f"wrote {args.out} ({len(strands)} strands, 1024 density tokens)")


def cmd_detokenize(args):
    profile = get_profile(args.profile)
    strands, _ = pipeline.load_tokens_json(_require_file(args.tokens))
    books = _load_codebooks(args, need=("coarse", "style"))
    guide_set = load_guide_set(_require_file(args.guides)) if args.guides else None
    scalp = guide_set.scalp if guide_set else None
    if scalp is None:
        from strandlang.hair import ScalpManifold

        scalp = ScalpManifold()
    style = pipeline.detokenize_hairstyle(
        strands, books["coarse"], books["style"], scalp, profile.strand_length
    )
    write_hair(args.out, style)
    print(f"wrote {args.out} ({len(style)} strands)")


def _parse_mode(name: str) -> grammar.Mode:
    try:
        return grammar.Mode[name.upper()]
    except KeyError:
        raise CliError(EXIT_USAGE, "usage", f"unknown mode {name!r}") from None


def cmd_serialize(args):
    profile = get_profile(args.profile)
    vocab = profile.vocabulary()
    strands, density = pipeline.load_tokens_json(_require_file(args.tokens))
    mode = _parse_mode(args.mode)
    seq = grammar.serialize(strands, density, mode, vocab)
    grammar.write_token_file(args.out, seq, vocab)
    print(f"wrote {args.out} ({len(seq)} ids, mode={mode.name.lower()})")


def cmd_parse(args):
    profile = get_profile(args.profile)
    vocab = profile.vocabulary()
    path = _require_file(args.input)
    try:
        grammar.check_token_manifest(path, vocab)
    except grammar.VocabHashMismatch as exc:
        raise CliError(EXIT_HASH_MISMATCH, "hash-mismatch", str(exc)) from None
    try:
        mode, ids = grammar.read_token_ids(path)
        parsed = grammar.parse(ids, vocab, expected_mode=mode)
    except grammar.ParseError as exc:
        raise CliError(EXIT_PARSE, exc.code.name.lower().replace("_", "-"), str(exc)) from None
    except ValueError as exc:
        raise CliError(EXIT_PARSE, "bad-file", str(exc)) from None
    print(
        f"{path}: ok (mode={mode.name.lower()}, {len(ids)} ids, "
        f"{parsed.strand_count()} strands)"
    )


def cmd_train(args):
    profile = get_profile(args.profile)
    vocab = profile.vocabulary()
    books = _load_codebooks(args)
    items = []
    for i, guides_dir in enumerate(args.guides):
        guide_set = load_guide_set(_require_file(guides_dir))
        items.append(
            pipeline.build_train_item(
                guide_set,
                books["coarse"],
                books["style"],
                books["density"],
                profile.k_geo,
                pool_size=1,
                seed=args.seed + i,
                style_id=os.path.basename(os.path.normpath(guides_dir)),
                cond_dim=profile.cond_dim,
            )
        )
    model_cfg = profile.model_config(seed=args.seed)
    train_cfg = profile.train_config(steps=args.steps, seed=args.seed)
    train_cfg.log_every = args.log_every
    if args.mode is not None:
        mode = _parse_mode(args.mode)
        probs = [0.0, 0.0, 0.0]
        probs[int(mode)] = 1.0
        train_cfg.mode_probs = tuple(probs)
    ckpt = armodel.train(items, vocab, model_cfg, train_cfg)
    armodel.save_checkpoint(args.out, ckpt)
    tail = float(np.mean(ckpt.loss_history[-50:])) if ckpt.loss_history else float("nan")
    status = "diverged" if ckpt.diverged else "done"
    print(f"wrote {args.out} ({status} at step {ckpt.step}, recent loss {tail:.4f})")
    if ckpt.diverged:
        raise CliError(EXIT_ERROR, "diverged", "training loss became non-finite")


def cmd_sample(args):
    profile = get_profile(args.profile)
    vocab = profile.vocabulary()
    ckpt = armodel.load_checkpoint(_require_file(args.checkpoint))
    if ckpt.vocab_hash != vocab.config_hash():
        raise CliError(
            EXIT_HASH_MISMATCH,
            "hash-mismatch",
            "checkpoint was trained with a different vocabulary",
        )
    conds = armodel.pseudo_condition(args.style_id, profile.cond_dim)
    decode_cfg = armodel.DecodeConfig(
        temperature=args.temperature,
        top_k=args.top_k,
        seed=args.seed,
        max_strands_per_region=profile.max_strands_per_region,
    )
    sample = armodel.sample_phased(conds, ckpt, vocab, decode_cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    for name, seq in (
        ("layout.hts", sample.layout_seq),
        ("coarse.hts", sample.coarse_seq),
        ("style.hts", sample.style_seq),
    ):
        grammar.write_token_file(os.path.join(args.out_dir, name), seq, vocab)
    pipeline.save_tokens_json(
        os.path.join(args.out_dir, "sample.tokens.json"),
        sample.strands,
        sample.density_tokens,
    )
    print(f"wrote {args.out_dir} ({len(sample.strands)} strands)")


def cmd_export_obj(args):
    if args.tokens:
        profile = get_profile(args.profile)
        strands_tok, _ = pipeline.load_tokens_json(_require_file(args.tokens))
        books = _load_codebooks(args, need=("coarse", "style"))
        from strandlang.hair import ScalpManifold

        style = pipeline.detokenize_hairstyle(
            strands_tok,
            books["coarse"],
            books["style"],
            ScalpManifold(),
            profile.strand_length,
        )
        strands = style.strands
    else:
        style = read_hair(_require_file(args.input))
        strands = style.strands
    if args.dense:
        guide_set = load_guide_set(_require_file(args.guides))
        strands = dense.interpolate_dense(
            guide_set, guide_set.density, args.dense, seed=args.seed
        )
    dense.export_obj(strands, args.out)
    print(f"wrote {args.out} ({len(strands)} polylines)")


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="strandlang", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        p.add_argument("--profile", default="test", help="constant profile (paper|test)")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("synth", cmd_synth, help="generate a synthetic hairstyle")
    p.add_argument("--out", required=True)
    p.add_argument("--family", default="wavy", choices=synth.FAMILIES)
    p.add_argument("--strands", type=int, default=2000)

    p = add("guides", cmd_guides, help="extract guide strands")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-guide", type=int, default=0)

    p = add("decompose", cmd_decompose, help="cache backbone/residual decompositions")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-geo", type=int, default=0)

    p = add("train-codebook", cmd_train_codebook, help="train a PQ or density codebook")
    p.add_argument("--guides", required=True)
    p.add_argument("--kind", required=True, choices=("coarse", "style", "density"))
    p.add_argument("--k", type=int, default=0)
    p.add_argument("--out", required=True)

    def add_codebook_args(p, density=True):
        p.add_argument("--coarse-codebook", required=True)
        p.add_argument("--style-codebook", required=True)
        if density:
            p.add_argument("--density-codebook", required=True)

    p = add("tokenize", cmd_tokenize, help="tokenize a guide set")
    p.add_argument("--guides", required=True)
    add_codebook_args(p)
    p.add_argument("--out", required=True)

    p = add("detokenize", cmd_detokenize, help="decode tokens back to strands")
    p.add_argument("--tokens", required=True)
    add_codebook_args(p, density=False)
    p.add_argument("--guides", default="")
    p.add_argument("--out", required=True)

    p = add("serialize", cmd_serialize, help="build a mode sequence token file")
    p.add_argument("--tokens", required=True)
    p.add_argument("--mode", required=True, choices=("layout", "coarse", "style"))
    p.add_argument("--out", required=True)

    p = add("parse", cmd_parse, help="lint a token file")
    p.add_argument("--in", dest="input", required=True)

    p = add("train", cmd_train, help="train the autoregressive model")
    p.add_argument("--guides", nargs="+", required=True)
    add_codebook_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--mode", default=None, help="restrict training to one mode")
    p.add_argument("--log-every", type=int, default=0)

    p = add("sample", cmd_sample, help="phased sampling from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--style-id", default="sample")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--top-k", type=int, default=0)

    p = add("export-obj", cmd_export_obj, help="export strands as an OBJ polyline file")
    p.add_argument("--in", dest="input", default="")
    p.add_argument("--tokens", default="")
    p.add_argument("--coarse-codebook", default="")
    p.add_argument("--style-codebook", default="")
    p.add_argument("--guides", default="")
    p.add_argument("--dense", type=int, default=0)
    p.add_argument("--out", required=True)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        args.fn(args)
    except CliError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: missing-file: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except grammar.VocabHashMismatch as exc:
        print(f"error: hash-mismatch: {exc}", file=sys.stderr)
        return EXIT_HASH_MISMATCH
    except grammar.ParseError as exc:
        print(f"error: {exc.code.name.lower().replace('_', '-')}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValueError, RuntimeError) as exc:
        print(f"error: invalid: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

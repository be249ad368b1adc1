"""Token vocabulary, sequence serializer, validating parser, loss masks.

A hairstyle serializes into one flat id list per generation mode::

    BOS  <img-slot> <txt-slot>  <den> d_1 .. d_1024
    <R_0> <loc-slot-0> unit* <R_0_end>  ...  <R_7> <loc-slot-7> unit* <R_7_end>
    EOS

Units depend on the mode: layout ``[s1, anchor, u, v]``, coarse
``[s2, u, v, c1..c4]``, style ``[s3, u, v, r1..r4]``. Regions always appear
in the fixed order Front, Top, Crown, Nape, LeftSide, RightSide,
LeftTemple, RightTemple; inside a region, units are sorted by
(v, u, anchor). Condition slots are positions that carry externally
supplied embedding vectors instead of vocabulary ids; in memory they hold
the sentinel ``COND_ID`` (-1) and on disk ``0xFFFFFFFF``.

The parser rejects instead of assuming: every structural violation maps to
a distinct :class:`ParseErrorCode`.

Token file format "HTS1": magic, mode u8, id count u32, ids u32 LE. A text
sidecar ``<file>.manifest`` records the vocabulary config hash; loading
refuses a mismatched hash.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import NamedTuple

import numpy as np

from strandlang.hair import N_REGIONS, REGION_NAMES
from strandlang.ioutil import Reader, atomic_write_bytes, atomic_write_text, pack_u32
from strandlang.quantize import ANCHOR_GRID, N_DENSITY_TOKENS, N_HEADS, UV_GRID

# special token ids
BOS = 0
EOS = 1
DEN = 2
_REGION_BASE = 3
S1 = 19
S2 = 20
S3 = 21
N_SPECIALS = 22

#: In-memory sentinel for condition-slot positions (no vocabulary id).
COND_ID = -1
_COND_FILE = 0xFFFFFFFF

TOKEN_MAGIC = b"HTS1"

N_ANCHORS = ANCHOR_GRID * ANCHOR_GRID  # 1024


def region_start_id(region: int) -> int:
    return _REGION_BASE + 2 * region


def region_end_id(region: int) -> int:
    return _REGION_BASE + 2 * region + 1


class Mode(IntEnum):
    LAYOUT = 0
    COARSE = 1
    STYLE = 2

    @property
    def separator(self) -> int:
        return (S1, S2, S3)[self.value]


_SEPARATORS = {S1: Mode.LAYOUT, S2: Mode.COARSE, S3: Mode.STYLE}


class Category(Enum):
    SPECIAL = "special"
    UV = "uv"
    ANCHOR = "anchor"
    COARSE = "coarse"
    STYLE = "style"
    DENSITY = "density"


class Role(Enum):
    """Grammar role of one sequence position (drives the loss mask)."""

    BOS = "bos"
    COND = "cond"
    DEN_MARK = "den"
    DENSITY = "density"
    REGION_START = "region_start"
    REGION_END = "region_end"
    SEPARATOR = "separator"
    ANCHOR = "anchor"
    U = "u"
    V = "v"
    GEOM = "geom"
    EOS = "eos"


_ROLE_CATEGORY = {
    Role.BOS: Category.SPECIAL,
    Role.COND: Category.SPECIAL,
    Role.DEN_MARK: Category.SPECIAL,
    Role.DENSITY: Category.DENSITY,
    Role.REGION_START: Category.SPECIAL,
    Role.REGION_END: Category.SPECIAL,
    Role.SEPARATOR: Category.SPECIAL,
    Role.ANCHOR: Category.ANCHOR,
    Role.U: Category.UV,
    Role.V: Category.UV,
    Role.EOS: Category.SPECIAL,
}


@dataclass(frozen=True)
class Vocabulary:
    """Unified token id layout with component-specific offsets.

    Categories are laid out contiguously: 22 specials, 256 UV values,
    1024 anchors, 4 coarse head sub-ranges, 4 style head sub-ranges,
    then density codes. The same local index in different heads maps to
    different global ids.
    """

    k_coarse: int
    k_style: int
    k_density: int

    def __post_init__(self):
        for name, k in (
            ("k_coarse", self.k_coarse),
            ("k_style", self.k_style),
            ("k_density", self.k_density),
        ):
            if k < 2:
                raise ValueError(f"{name} must be >= 2")

    @property
    def offset_uv(self) -> int:
        return N_SPECIALS

    @property
    def offset_anchor(self) -> int:
        return self.offset_uv + UV_GRID

    @property
    def offset_coarse(self) -> int:
        return self.offset_anchor + N_ANCHORS

    @property
    def offset_style(self) -> int:
        return self.offset_coarse + N_HEADS * self.k_coarse

    @property
    def offset_density(self) -> int:
        return self.offset_style + N_HEADS * self.k_style

    @property
    def size(self) -> int:
        return self.offset_density + self.k_density

    # -- id construction ---------------------------------------------------

    def uv_id(self, value: int) -> int:
        if not 0 <= value < UV_GRID:
            raise ValueError(f"uv value {value} out of range")
        return self.offset_uv + value

    def anchor_id(self, value: int) -> int:
        if not 0 <= value < N_ANCHORS:
            raise ValueError(f"anchor {value} out of range")
        return self.offset_anchor + value

    def coarse_id(self, head: int, index: int) -> int:
        if not 0 <= head < N_HEADS or not 0 <= index < self.k_coarse:
            raise ValueError(f"coarse token (head={head}, index={index}) out of range")
        return self.offset_coarse + head * self.k_coarse + index

    def style_id(self, head: int, index: int) -> int:
        if not 0 <= head < N_HEADS or not 0 <= index < self.k_style:
            raise ValueError(f"style token (head={head}, index={index}) out of range")
        return self.offset_style + head * self.k_style + index

    def density_id(self, index: int) -> int:
        if not 0 <= index < self.k_density:
            raise ValueError(f"density token {index} out of range")
        return self.offset_density + index

    # -- id inspection -----------------------------------------------------

    def category(self, token_id: int) -> Category:
        return self.describe(token_id)[0]

    def describe(self, token_id: int) -> tuple:
        """(category, head index or None, local index) of a global id."""
        t = int(token_id)
        if not 0 <= t < self.size:
            raise ValueError(f"token id {t} outside vocabulary")
        if t < N_SPECIALS:
            return Category.SPECIAL, None, t
        if t < self.offset_anchor:
            return Category.UV, None, t - self.offset_uv
        if t < self.offset_coarse:
            return Category.ANCHOR, None, t - self.offset_anchor
        if t < self.offset_style:
            local = t - self.offset_coarse
            return Category.COARSE, local // self.k_coarse, local % self.k_coarse
        if t < self.offset_density:
            local = t - self.offset_style
            return Category.STYLE, local // self.k_style, local % self.k_style
        return Category.DENSITY, None, t - self.offset_density

    def category_range(self, category: Category, head: int | None = None) -> range:
        """Global id range of a category (or of one head's sub-range)."""
        if category is Category.SPECIAL:
            return range(0, N_SPECIALS)
        if category is Category.UV:
            return range(self.offset_uv, self.offset_uv + UV_GRID)
        if category is Category.ANCHOR:
            return range(self.offset_anchor, self.offset_anchor + N_ANCHORS)
        if category is Category.COARSE:
            if head is None:
                return range(self.offset_coarse, self.offset_coarse + N_HEADS * self.k_coarse)
            base = self.offset_coarse + head * self.k_coarse
            return range(base, base + self.k_coarse)
        if category is Category.STYLE:
            if head is None:
                return range(self.offset_style, self.offset_style + N_HEADS * self.k_style)
            base = self.offset_style + head * self.k_style
            return range(base, base + self.k_style)
        if category is Category.DENSITY:
            return range(self.offset_density, self.offset_density + self.k_density)
        raise ValueError(f"unknown category {category}")

    def manifest(self) -> list:
        """(category, offset, size) rows in layout order."""
        rows = [("special", 0, N_SPECIALS), ("uv", self.offset_uv, UV_GRID),
                ("anchor", self.offset_anchor, N_ANCHORS)]
        for h in range(N_HEADS):
            rows.append((f"coarse_head{h}", self.offset_coarse + h * self.k_coarse, self.k_coarse))
        for h in range(N_HEADS):
            rows.append((f"style_head{h}", self.offset_style + h * self.k_style, self.k_style))
        rows.append(("density", self.offset_density, self.k_density))
        return rows

    def config_hash(self) -> str:
        text = (
            f"specials={N_SPECIALS};uv={UV_GRID};anchors={N_ANCHORS};"
            f"k_coarse={self.k_coarse};k_style={self.k_style};k_density={self.k_density}"
        )
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def build_vocabulary(k_coarse: int, k_style: int, k_density: int) -> Vocabulary:
    """Deterministic vocabulary layout for the given codebook sizes."""
    return Vocabulary(k_coarse=k_coarse, k_style=k_style, k_density=k_density)


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------

class CondSlot(NamedTuple):
    """A position carrying an external condition embedding, not a token."""

    position: int
    kind: str            # "img", "txt" or "region"
    region: int | None


@dataclass
class StrandTokens:
    """Discrete tokens of one guide strand (fields unused by a mode are None)."""

    region: int
    u: int
    v: int
    anchor: int | None = None
    coarse: np.ndarray | None = None
    style: np.ndarray | None = None

    def __post_init__(self):
        if self.coarse is not None:
            self.coarse = np.asarray(self.coarse, dtype=np.int64)
        if self.style is not None:
            self.style = np.asarray(self.style, dtype=np.int64)

    def sort_key(self) -> tuple:
        return (self.v, self.u, -1 if self.anchor is None else self.anchor)


@dataclass
class TokenSequence:
    """A mode-tagged flat id list with its condition-slot positions."""

    mode: Mode
    ids: np.ndarray
    condition_slots: tuple

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self) -> int:
        return self.ids.shape[0]


class ParseErrorCode(Enum):
    UNEXPECTED_END = "unexpected end of sequence"
    FRAMING = "bad sequence framing"
    CONDITION_SLOT = "condition slot violation"
    MARKER = "missing or misplaced marker"
    REGION_ORDER = "region order violation"
    DENSITY_LENGTH = "wrong density length"
    CATEGORY = "category violation"
    HEAD_ORDER = "head-order violation"
    MODE_MIXING = "mode mixing"
    TRAILING_GARBAGE = "trailing garbage"
    TOKEN_RANGE = "token out of vocabulary range"


class ParseError(ValueError):
    def __init__(self, code: ParseErrorCode, position: int, detail: str = ""):
        self.code = code
        self.position = position
        msg = f"{code.value} at position {position}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


@dataclass
class ParsedSequence:
    """Structured view of a valid sequence."""

    mode: Mode | None
    density_tokens: np.ndarray
    regions: tuple          # 8 tuples of StrandTokens
    roles: list             # per-position Role

    def strand_count(self) -> int:
        return sum(len(r) for r in self.regions)


def serialize(
    strands,
    density_tokens,
    mode: Mode,
    vocab: Vocabulary,
) -> TokenSequence:
    """Assemble the mode's flat id sequence for a tokenized hairstyle.

    Regions are emitted in the fixed canonical order; within a region,
    strands are sorted by (v, u, anchor). Raises ValueError naming the
    offending strand when a token is out of range.
    """
    mode = Mode(mode)
    density_tokens = np.asarray(density_tokens, dtype=np.int64)
    if density_tokens.shape != (N_DENSITY_TOKENS,):
        raise ValueError(f"density tokens must have length {N_DENSITY_TOKENS}")

    by_region = [[] for _ in range(N_REGIONS)]
    for i, s in enumerate(strands):
        try:
            if not 0 <= s.region < N_REGIONS:
                raise ValueError(f"invalid region id {s.region}")
            vocab.uv_id(s.u)
            vocab.uv_id(s.v)
            if mode is Mode.LAYOUT:
                if s.anchor is None:
                    raise ValueError("layout mode requires an anchor token")
                vocab.anchor_id(s.anchor)
            elif mode is Mode.COARSE:
                if s.coarse is None or len(s.coarse) != N_HEADS:
                    raise ValueError("coarse mode requires 4 coarse tokens")
                for h in range(N_HEADS):
                    vocab.coarse_id(h, int(s.coarse[h]))
            else:
                if s.style is None or len(s.style) != N_HEADS:
                    raise ValueError("style mode requires 4 style tokens")
                for h in range(N_HEADS):
                    vocab.style_id(h, int(s.style[h]))
        except ValueError as exc:
            raise ValueError(f"strand {i}: {exc}") from None
        by_region[s.region].append(s)
    for units in by_region:
        units.sort(key=StrandTokens.sort_key)

    ids = [BOS, COND_ID, COND_ID, DEN]
    slots = [CondSlot(1, "img", None), CondSlot(2, "txt", None)]
    ids.extend(vocab.density_id(int(d)) for d in density_tokens)
    for region in range(N_REGIONS):
        ids.append(region_start_id(region))
        slots.append(CondSlot(len(ids), "region", region))
        ids.append(COND_ID)
        for s in by_region[region]:
            ids.append(mode.separator)
            if mode is Mode.LAYOUT:
                ids.append(vocab.anchor_id(s.anchor))
                ids.append(vocab.uv_id(s.u))
                ids.append(vocab.uv_id(s.v))
            else:
                ids.append(vocab.uv_id(s.u))
                ids.append(vocab.uv_id(s.v))
                codes = s.coarse if mode is Mode.COARSE else s.style
                maker = vocab.coarse_id if mode is Mode.COARSE else vocab.style_id
                ids.extend(maker(h, int(codes[h])) for h in range(N_HEADS))
        ids.append(region_end_id(region))
    ids.append(EOS)
    return TokenSequence(
        mode=mode, ids=np.array(ids, dtype=np.int64), condition_slots=tuple(slots)
    )


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class _Cursor:
    def __init__(self, ids: np.ndarray, vocab: Vocabulary):
        self.ids = ids
        self.vocab = vocab
        self.pos = 0
        self.roles = [None] * len(ids)

    def eof(self) -> bool:
        return self.pos >= len(self.ids)

    def peek(self) -> int:
        if self.eof():
            raise ParseError(ParseErrorCode.UNEXPECTED_END, self.pos)
        t = int(self.ids[self.pos])
        if t != COND_ID and not 0 <= t < self.vocab.size:
            raise ParseError(ParseErrorCode.TOKEN_RANGE, self.pos, f"id {t}")
        return t

    def advance(self, role: Role) -> int:
        t = self.peek()
        self.roles[self.pos] = role
        self.pos += 1
        return t


def parse(ids, vocab: Vocabulary, expected_mode: Mode | None = None) -> ParsedSequence:
    """Validate a flat id list against the grammar and structure it.

    Never assumes well-formedness: every violation raises a
    :class:`ParseError` with a specific code. ``expected_mode`` (when
    given) additionally pins the unit separator the sequence must use.
    """
    ids = np.asarray(ids, dtype=np.int64)
    cur = _Cursor(ids, vocab)

    if cur.peek() != BOS:
        raise ParseError(ParseErrorCode.FRAMING, 0, "sequence must start with BOS")
    cur.advance(Role.BOS)
    for kind in ("img", "txt"):
        if cur.peek() != COND_ID:
            raise ParseError(
                ParseErrorCode.CONDITION_SLOT, cur.pos, f"expected global {kind} slot"
            )
        cur.advance(Role.COND)
    if cur.peek() != DEN:
        raise ParseError(ParseErrorCode.MARKER, cur.pos, "expected <den> marker")
    cur.advance(Role.DEN_MARK)

    # The density run is validated in bulk; it dominates sequence length.
    start = cur.pos
    block = ids[start : start + N_DENSITY_TOKENS]
    lo, hi = vocab.offset_density, vocab.offset_density + vocab.k_density
    ok = (block >= lo) & (block < hi)
    if not ok.all():
        bad = start + int(np.argmin(ok))
        cur.pos = bad
        t = cur.peek()  # raises TOKEN_RANGE / normalizes the id
        if t == COND_ID:
            raise ParseError(ParseErrorCode.CONDITION_SLOT, bad, "unexpected slot")
        raise ParseError(
            ParseErrorCode.DENSITY_LENGTH,
            bad,
            f"density run ended after {bad - start} of {N_DENSITY_TOKENS} tokens",
        )
    if len(block) < N_DENSITY_TOKENS:
        raise ParseError(ParseErrorCode.UNEXPECTED_END, len(ids))
    density = block - lo
    cur.roles[start : start + N_DENSITY_TOKENS] = [Role.DENSITY] * N_DENSITY_TOKENS
    cur.pos = start + N_DENSITY_TOKENS
    nxt = cur.peek()
    if nxt != COND_ID and vocab.category(nxt) is Category.DENSITY:
        raise ParseError(
            ParseErrorCode.DENSITY_LENGTH, cur.pos, "more than 1024 density tokens"
        )

    mode = Mode(expected_mode) if expected_mode is not None else None
    regions = []
    for region in range(N_REGIONS):
        t = cur.peek()
        if t != region_start_id(region):
            raise ParseError(
                ParseErrorCode.REGION_ORDER,
                cur.pos,
                f"expected region marker <{REGION_NAMES[region]}>",
            )
        cur.advance(Role.REGION_START)
        if cur.peek() != COND_ID:
            raise ParseError(
                ParseErrorCode.CONDITION_SLOT, cur.pos, "expected region text slot"
            )
        cur.advance(Role.COND)

        units = []
        while True:
            t = cur.peek()
            if t == region_end_id(region):
                cur.advance(Role.REGION_END)
                break
            if t in _SEPARATORS:
                sep_mode = _SEPARATORS[t]
                if mode is None:
                    mode = sep_mode
                elif sep_mode is not mode:
                    raise ParseError(
                        ParseErrorCode.MODE_MIXING,
                        cur.pos,
                        f"{sep_mode.name.lower()} unit in a {mode.name.lower()} sequence",
                    )
                cur.advance(Role.SEPARATOR)
                units.append(_parse_unit(cur, vocab, mode, region))
                continue
            if t == COND_ID:
                raise ParseError(ParseErrorCode.CONDITION_SLOT, cur.pos, "unexpected slot")
            if t < N_SPECIALS:
                raise ParseError(
                    ParseErrorCode.REGION_ORDER,
                    cur.pos,
                    f"unexpected marker inside region <{REGION_NAMES[region]}>",
                )
            raise ParseError(
                ParseErrorCode.CATEGORY,
                cur.pos,
                "expected a unit separator or region end marker",
            )
        regions.append(tuple(units))

    if cur.peek() != EOS:
        raise ParseError(ParseErrorCode.FRAMING, cur.pos, "expected EOS")
    cur.advance(Role.EOS)
    if not cur.eof():
        raise ParseError(ParseErrorCode.TRAILING_GARBAGE, cur.pos)

    return ParsedSequence(
        mode=mode, density_tokens=density, regions=tuple(regions), roles=cur.roles
    )


def _parse_unit(cur: _Cursor, vocab: Vocabulary, mode: Mode, region: int) -> StrandTokens:
    def expect(category: Category, role: Role, head: int | None = None) -> int:
        t = cur.peek()
        if t == COND_ID:
            raise ParseError(ParseErrorCode.CONDITION_SLOT, cur.pos, "unexpected slot")
        cat, got_head, local = vocab.describe(t)
        if cat is not category:
            geometry = (Category.COARSE, Category.STYLE)
            if category in geometry and cat in geometry:
                raise ParseError(
                    ParseErrorCode.MODE_MIXING,
                    cur.pos,
                    f"{cat.value} token where {category.value} expected",
                )
            raise ParseError(
                ParseErrorCode.CATEGORY,
                cur.pos,
                f"{cat.value} token where {category.value} expected",
            )
        if head is not None and got_head != head:
            raise ParseError(
                ParseErrorCode.HEAD_ORDER,
                cur.pos,
                f"head {got_head} token where head {head} expected",
            )
        cur.advance(role)
        return local

    if mode is Mode.LAYOUT:
        anchor = expect(Category.ANCHOR, Role.ANCHOR)
        u = expect(Category.UV, Role.U)
        v = expect(Category.UV, Role.V)
        return StrandTokens(region=region, u=u, v=v, anchor=anchor)
    u = expect(Category.UV, Role.U)
    v = expect(Category.UV, Role.V)
    geom_cat = Category.COARSE if mode is Mode.COARSE else Category.STYLE
    codes = np.array(
        [expect(geom_cat, Role.GEOM, head=h) for h in range(N_HEADS)], dtype=np.int64
    )
    if mode is Mode.COARSE:
        return StrandTokens(region=region, u=u, v=v, coarse=codes)
    return StrandTokens(region=region, u=u, v=v, style=codes)


# ---------------------------------------------------------------------------
# loss mask
# ---------------------------------------------------------------------------

@dataclass
class LossMask:
    """Per-position supervision flags and category weights.

    ``contributes[t]`` says whether the token at position t is a training
    target. BOS and condition slots never contribute; in coarse/style
    sequences the re-injected (u, v) anchors inside units are excluded.
    """

    contributes: np.ndarray
    weights: np.ndarray

    @property
    def n_valid(self) -> int:
        return int(self.contributes.sum())


def build_loss_mask(
    seq: TokenSequence, vocab: Vocabulary, weights: dict | None = None
) -> LossMask:
    """Supervision mask for a well-formed sequence (raises if malformed).

    ``weights`` maps category names ("special", "uv", "anchor", "coarse",
    "style", "density") to loss weights; everything defaults to 1.0.
    """
    parsed = parse(seq.ids, vocab, expected_mode=seq.mode)
    weights = weights or {}
    n = len(seq.ids)
    contributes = np.ones(n, dtype=bool)
    w = np.ones(n, dtype=np.float64)
    redundant = seq.mode in (Mode.COARSE, Mode.STYLE)
    for t, role in enumerate(parsed.roles):
        if role in (Role.BOS, Role.COND):
            contributes[t] = False
            w[t] = 0.0
            continue
        if redundant and role in (Role.U, Role.V):
            contributes[t] = False
        if role is Role.GEOM:
            cat = Category.COARSE if seq.mode is Mode.COARSE else Category.STYLE
        else:
            cat = _ROLE_CATEGORY[role]
        w[t] = float(weights.get(cat.value, 1.0))
    return LossMask(contributes=contributes, weights=w)


# ---------------------------------------------------------------------------
# token files
# ---------------------------------------------------------------------------

class VocabHashMismatch(ValueError):
    pass


def write_token_file(path, seq: TokenSequence, vocab: Vocabulary) -> None:
    ids = seq.ids.astype(np.int64)
    file_ids = np.where(ids == COND_ID, _COND_FILE, ids).astype("<u4")
    payload = TOKEN_MAGIC + bytes([int(seq.mode)]) + pack_u32(len(ids)) + file_ids.tobytes()
    atomic_write_bytes(path, payload)
    manifest = (
        f"vocab_hash = {vocab.config_hash()}\n"
        f"mode = {seq.mode.name.lower()}\n"
        f"id_count = {len(ids)}\n"
    )
    atomic_write_text(str(path) + ".manifest", manifest)


def read_token_ids(path) -> tuple:
    """(mode, raw id array) from a token file; does not validate grammar."""
    with open(path, "rb") as fh:
        data = fh.read()
    rd = Reader(data, name=str(path))
    rd.magic(TOKEN_MAGIC)
    mode = Mode(rd.u8())
    count = rd.u32()
    expected = 4 * count
    if len(data) - rd.pos < expected:
        raise ValueError(f"{path}: unexpected end of sequence")
    raw = np.frombuffer(rd.take(expected), dtype="<u4").astype(np.int64)
    rd.done()
    ids = np.where(raw == _COND_FILE, COND_ID, raw)
    return mode, ids


def check_token_manifest(path, vocab: Vocabulary) -> None:
    """Verify the sidecar's vocabulary hash when a sidecar exists."""
    manifest = str(path) + ".manifest"
    if not os.path.exists(manifest):
        return
    with open(manifest) as fh:
        entries = dict(
            (k.strip(), v.strip())
            for k, _, v in (line.partition("=") for line in fh if "=" in line)
        )
    recorded = entries.get("vocab_hash")
    if recorded is not None and recorded != vocab.config_hash():
        raise VocabHashMismatch(
            f"{path}: token file was produced with a different vocabulary "
            f"({recorded} != {vocab.config_hash()})"
        )


def read_token_file(path, vocab: Vocabulary, validate: bool = True) -> TokenSequence:
    """Load, hash-check and (by default) grammar-validate a token file."""
    check_token_manifest(path, vocab)
    mode, ids = read_token_ids(path)
    slots = tuple(
        CondSlot(int(p), "unknown", None) for p in np.flatnonzero(ids == COND_ID)
    )
    seq = TokenSequence(mode=mode, ids=ids, condition_slots=slots)
    if validate:
        parsed = parse(ids, vocab, expected_mode=mode)
        slots = []
        for pos, role in enumerate(parsed.roles):
            if role is Role.COND:
                slots.append(pos)
        kinds = ["img", "txt"] + ["region"] * N_REGIONS
        regions = [None, None] + list(range(N_REGIONS))
        seq.condition_slots = tuple(
            CondSlot(p, kinds[i], regions[i]) for i, p in enumerate(slots)
        )
    return seq

#!/usr/bin/env python3
"""Regenerates include/intentctx/detail/unicode_tables.hpp from unicodedata."""
import sys
import unicodedata


def ranges(pred):
    out, start, prev = [], None, None
    for cp in range(0x110000):
        if pred(cp):
            if start is None:
                start = cp
            prev = cp
        elif start is not None:
            out.append((start, prev))
            start = None
    if start is not None:
        out.append((start, prev))
    return out


def lower_pairs():
    pairs = []
    for cp in range(0x110000):
        ch = chr(cp)
        lo = ch.lower()
        if len(lo) == 1 and lo != ch:
            pairs.append((cp, ord(lo)))
    return pairs


def emit_ranges(name, rs):
    lines = [f"inline constexpr CodepointRange {name}[] = {{"]
    for a, b in rs:
        lines.append(f"    {{0x{a:04X}, 0x{b:04X}}},")
    lines.append("};")
    return "\n".join(lines)


def main():
    punct = ranges(lambda c: unicodedata.category(chr(c)).startswith("P"))
    space = ranges(lambda c: unicodedata.category(chr(c)) == "Zs" or chr(c) in "\t\n\v\f\r\x1c\x1d\x1e\x1f\x85  ")
    lower = lower_pairs()
    out = [
        "// Generated by tools/gen_unicode_tables.py (Unicode " + unicodedata.unidata_version + "). Do not edit.",
        "#pragma once",
        "",
        "#include <cstdint>",
        "",
        "namespace intentctx::detail {",
        "",
        "struct CodepointRange {",
        "  char32_t first;",
        "  char32_t last;",
        "};",
        "",
        "struct CasePair {",
        "  char32_t upper;",
        "  char32_t lower;",
        "};",
        "",
        "// General category P*.",
        emit_ranges("kPunctuationRanges", punct),
        "",
        "// General category Zs plus the control whitespace characters.",
        emit_ranges("kWhitespaceRanges", space),
        "",
        "// Single-codepoint simple lowercase mappings, sorted by upper.",
        "inline constexpr CasePair kLowercasePairs[] = {",
    ]
    for u, l in lower:
        out.append(f"    {{0x{u:04X}, 0x{l:04X}}},")
    out += ["};", "", "}  // namespace intentctx::detail", ""]
    sys.stdout.write("\n".join(out))


if __name__ == "__main__":
    main()

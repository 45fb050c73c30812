#!/usr/bin/env python3
"""Reference scoring adapter: equal logits for every token.

Speaks the engine's line protocol on stdin/stdout:

    adapter -> engine   VOCAB <size> <vocab-id>
    engine  -> adapter  SCORE <space-separated token ids>
    adapter -> engine   LOGITS <size floats, 9 significant digits>

Useful as a protocol smoke test and as a template for real adapters: replace
``logits_for`` with calls into an actual model.
"""

import argparse
import sys


def logits_for(ids, size):
    return [0.0] * size


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=17)
    parser.add_argument("--vocab-id", default="arithmetic-char-v1")
    args = parser.parse_args()

    print(f"VOCAB {args.size} {args.vocab_id}", flush=True)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] != "SCORE":
            print(f"unexpected request: {line[:80]}", file=sys.stderr)
            return 2
        ids = [int(p) for p in parts[1:]]
        values = logits_for(ids, args.size)
        print("LOGITS " + " ".join("%.9g" % v for v in values), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())

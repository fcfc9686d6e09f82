"""Parameter counts and serialized sizes of the three model variants.

    python scripts/size_budget.py
"""

import itertools

from tinyasc.models import build, build_spec
from tinyasc.nn import conv_weight_count, param_count
from tinyasc.quant import checkpoint, deployment_model, serialize

PUBLISHED_KB = {"M1": 10.6, "M2": 10.0, "M3": 36.8}


def main():
    print(f"{'model':<6}{'std conv':>10}{'dec conv':>10}{'ratio':>8}{'params':>9}{'int8 B':>9}{'fp32 B':>9}{'ckpt B':>9}{'KB vs pub':>14}")
    sizes = {}
    for mid, pub in PUBLISHED_KB.items():
        std = conv_weight_count(build_spec(mid).layers)
        spec, params = build(mid, decomposed=True)
        dec = conv_weight_count(spec.layers)
        q = len(serialize(deployment_model(spec, params)))
        f = len(serialize(deployment_model(spec, params, quantize=False)))
        ck = len(serialize(checkpoint(spec, params)))
        sizes[mid] = q
        print(
            f"{mid:<6}{std:>10}{dec:>10}{'1/%.2f' % (std / dec):>8}{param_count(spec.layers).total:>9}"
            f"{q:>9}{f:>9}{ck:>9}{q / 1000:>8.2f}/{pub:<5}"
        )
    print()
    for combo in itertools.combinations_with_replacement(PUBLISHED_KB, 3):
        total = sum(sizes[m] for m in combo)
        print(f"{'+'.join(combo):<10} {total:>7} B  {'ok' if total < 128_000 else 'OVER'}")


if __name__ == "__main__":
    main()

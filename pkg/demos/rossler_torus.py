"""Torus bifurcating from a small-amplitude Rossler cycle, via the bundled demo config.

Equivalent to ``toruskit demo rossler --out DIR``; prints a digest of the report.
"""

import json
import sys
import tempfile
from pathlib import Path

from toruskit.cli import demo_config_path
from toruskit.pipeline import load_config, run_analyze


def main(out_dir=None):
    out = Path(out_dir or tempfile.mkdtemp(prefix="rossler-"))
    code = run_analyze(load_config(demo_config_path("rossler")), out)
    rep = json.loads((out / "report.json").read_text())
    print(f"exit code {code}, status {rep['status']}")
    if code != 0:
        print(rep.get("error") or rep.get("absence"))
        return code
    a, t = rep["averaging"], rep["torus"]
    print(f"guiding Hopf at {a['hopf']['x0']}, alpha'(0) = {a['hopf']['alpha_prime_0']:.5f}")
    print(f"ell1 expansion j* = {a['j_star']}, coefficient {a['ell1_coeffs'][str(a['j_star'])]:.4f}")
    print(f"mu_eps = {rep['ns_certificate']['mu_star']:.6e}, torus at mu = {rep['torus_parameter']['mu']:.6e}")
    print(f"torus {t['attracting_or_repelling']}: residual {t['residual']:.1e}, gap {t['gap']:.3e}, "
          f"tangential {t['tangential_exponent']:.1e}")
    f = t["fenichel"]
    print(f"transversality angle {f['min_transversality_angle']:.3f} rad, returns "
          f"{f['forward_returns']}/{f['backward_returns']}, tau variation {f['tau_modulus']:.1e}")
    print(f"mesh and circle written to {out}")
    return code


if __name__ == "__main__":
    sys.exit(main(sys.argv[1] if len(sys.argv) > 1 else None))

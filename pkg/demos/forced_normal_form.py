"""Averaging route to a torus in a periodically forced Hopf normal form.

The family x' = eps F_1(t, x, mu) + eps^2 F_2(x) has a guiding Hopf point at the
origin. The stroboscopic map undergoes a Neimark-Sacker bifurcation at
mu_eps = -eps c2 with c2 = 1/4; a short sweep then shows the torus appearing on
one side only.
"""

import sys
import tempfile
from pathlib import Path

from toruskit import avg, models, pipeline

DATA = Path(pipeline.__file__).parent / "data"


def main(out_dir=None):
    vf = models.forced_normal_form()
    cfg = pipeline.load_config(DATA / "forced_normal_form.json")
    rep, certs = pipeline.averaging_front(cfg, vf)
    print(f"first non-vanishing average: l = {rep.l}")
    print(f"guiding Hopf point x0 = {rep.hopf.x0}, alpha'(0) = {rep.hopf.alpha_prime_0:.6f}")
    coeffs = ", ".join(f"{j}: {c:+.5f}" for j, c in sorted(rep.ell1_coeffs.items()))
    print(f"ell1(eps) expansion {{{coeffs}}}, leading order j* = {rep.j_star}")
    for eps, (cert, _) in sorted(certs.items()):
        print(f"  eps = {eps:<7.4g} mu_eps = {cert.mu_star:+.8f}  (-eps/4 = {-eps / 4:+.8f})")
    side = avg.ell1_sign_torus_side(rep.hopf.alpha_prime_0, rep.ell1_coeffs[rep.j_star])
    print(f"torus expected for mu {'>' if side > 0 else '<'} mu_eps")

    out = Path(out_dir or tempfile.mkdtemp(prefix="sweep-"))
    rows = pipeline.run_sweep(cfg, out)
    for mu, eps, label, res, gap in rows:
        print(f"  mu = {mu:+.3f} eps = {eps:.2f}: {label:<17} residual {res:.1e} gap {gap:.2e}")
    print(f"sweep written to {out / 'sweep.csv'}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)

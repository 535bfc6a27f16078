"""A cs-blender and a cu-blender joined by two translations, then shaken.

Run: python demos/robust_cycle.py
"""

from skewblend import build_cycle_scenario, robustness_probe

for c, i1, i2 in ((2, 1, 1), (3, 1, 2)):
    sys, cert = build_cycle_scenario(c, i1, i2, 0.2)
    print(f"c={c} indices ({i1}, {i2}): alphabet d={sys.d}, co-index {cert.co_index}, valid={cert.valid}")
    for name, m in sorted(cert.margins.items()):
        print(f"    {name:<12} {m:.5f}")
    print(f"    transitions {cert.t12.word} and {cert.t21.word}")

    eta = cert.slack * sys.gamma / 4
    ok = robustness_probe(cert, eta, 20, seed=1)
    print(f"    eta={eta:.2e}: {ok.passed}/{ok.trials} perturbed systems keep the cycle, "
          f"min slack {ok.min_slack:.5f}")
    rough = robustness_probe(cert, 10 * cert.slack, 5, seed=1)
    print(f"    eta={10 * cert.slack:.2e}: {rough.passed}/{rough.trials} pass; failing stages "
          f"{sorted({f['stage'] for f in rough.failures})}")

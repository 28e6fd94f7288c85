"""Print closed-loop statistics of the default synthetic ground truth.

    python scripts/calibrate_truth.py [--seed N] [--duration MIN]
"""
import argparse

import numpy as np

from freezerid.model import DEFAULT_TRUTH
from freezerid.simulate import SimConfig, duty_cycle_periods, simulate_sde


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--duration", type=float, default=2880.0)
    args = ap.parse_args()

    out = simulate_sde(DEFAULT_TRUTH, SimConfig(duration=args.duration, seed=args.seed))
    T_c, T_w, T_e = out.true_states.T
    periods = duty_cycle_periods(out.inputs.m)
    noise_sd = np.sqrt(DEFAULT_TRUTH.nu)
    print(f"samples               {T_c.size}")
    print(f"duty cycle [min]      mean {periods.mean():.1f}  min {periods.min()}  max {periods.max()}")
    print(f"ON fraction           {out.inputs.m.mean():.3f}")
    print(f"T_c range [degC]      {T_c.min():.2f} .. {T_c.max():.2f}")
    print(f"T_w range [degC]      {T_w.min():.2f} .. {T_w.max():.2f}")
    print(f"T_e range [degC]      {T_e.min():.2f} .. {T_e.max():.2f}")
    print(f"max M_ac              {out.inputs.M_ac.max():.0f}")
    print(f"observation SNR       {T_c.std() / noise_sd:.1f} (T_c std / noise std)")


if __name__ == "__main__":
    main()

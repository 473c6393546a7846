"""The three independent correctness oracles.

The simulator's math is verified against code paths that share nothing with
it:

  finite_difference  closed-form adapter gradients vs central differences
  trajectory         two protocol rounds vs a straight-line replay of the
                     exact update recursion
  moment_identity    Monte-Carlo second moments of averaged initializations
                     vs the closed-form (r / N) * sigma^2 * I

The same suites back the `fedlora check` subcommand, which exits 3 on any
failure.

    python demos/05_oracles.py
"""

from fedlora.check import run_all

for result in run_all():
    status = "PASS" if result.passed else "FAIL"
    print(f"{result.name:<18} {status}  {result.detail}")

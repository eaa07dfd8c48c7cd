"""splab: a desk-scale self-play reasoning laboratory.

A single tabular policy plays two roles over a tiny verifiable expression
language: a proposer that invents (program, input) tasks and a solver that
answers deduction, abduction and induction questions about validated tasks.
Training is REINFORCE with per-(mode, role) reward baselines, and the
package ships exact, property-tested analysis instruments: policy entropy,
parameter update sparsity, unbiased pass@k and difficulty probes.
"""

__version__ = "0.1.0"

"""Blockchain-anchored federated learning for turbofan RUL prognostics.

A single-process simulation: workers fit linear SVR models on CMAPSS shards,
anchor RSA-encrypted content hashes of their weights on a proof-of-work chain,
and a monitor verifies, rewards and averages the updates.
"""

__version__ = "0.1.0"

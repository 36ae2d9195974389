"""Rorqual TEE-assisted DAG mempool, pull-broadcast baseline and Bullshark ordering, in simulation."""

__version__ = "0.1.0"

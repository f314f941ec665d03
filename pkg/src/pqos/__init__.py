"""Predictive QoS for teleoperated driving: simulator, DDQN agents and federated training."""

__version__ = "0.1.0"

"""SAC and PPO agents trained jointly with the encoder."""

"""Loss-network analysis toolkit."""

# Grid Consensus HTTP API

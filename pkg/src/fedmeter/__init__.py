"""Multi-task federated learning simulator for behind-the-meter solar estimation."""

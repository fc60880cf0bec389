"""Settings, logging, errors, documents and the run ledger shared by the backend."""

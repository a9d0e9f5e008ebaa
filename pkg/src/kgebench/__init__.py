"""Knowledge-graph embedding toolkit."""

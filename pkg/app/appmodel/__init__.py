"""Client-side application model: cloud client, applications and their managers."""

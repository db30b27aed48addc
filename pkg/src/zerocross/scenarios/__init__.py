"""Built-in scenario files, loadable by name."""

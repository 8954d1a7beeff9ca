from graph.builder import app

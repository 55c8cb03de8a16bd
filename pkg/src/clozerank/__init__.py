"""Toolkit for probing relational knowledge captured by static vector models.

Pipeline: train a wordpiece vocabulary, train subword skip-gram embeddings
over the tokenized corpus, rank per-relation candidate sets for cloze
queries by cosine similarity, score the rankings, and account for the
energy cost of training runs.
"""

__version__ = "0.1.0"

"""First-stage lexical retrieval: tokenizer, BEIR corpus files and BM25."""

from services.retrieval.bm25_index import (
    InvertedIndex,
    bm25_score,
    build_index,
    load_index,
    save_index,
    search,
    search_many,
)
from services.retrieval.corpus import (
    Document,
    corpus_map,
    read_corpus,
    read_queries,
    write_corpus,
    write_queries,
)
from services.retrieval.tokenizer import fold_ascii, tokenize

__all__ = [
    'InvertedIndex', 'bm25_score', 'build_index', 'load_index', 'save_index', 'search', 'search_many',
    'Document', 'corpus_map', 'read_corpus', 'read_queries', 'write_corpus', 'write_queries',
    'fold_ascii', 'tokenize',
]

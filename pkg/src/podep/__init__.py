"""Character-level graph-based dependency parser with a pointer-network head."""

from .conllu import Sentence, Token, parse_conllu, read_conllu, write_conllu
from .decoder import ParseResult, cle_decode, decode, greedy_decode
from .lexicon import Lexicon, build_lexicon
from .metrics import EvalReport, attachment_scores
from .model import ModelConfig, Parser

__version__ = "0.1.0"

__all__ = [
    "Sentence", "Token", "parse_conllu", "read_conllu", "write_conllu",
    "ParseResult", "cle_decode", "decode", "greedy_decode",
    "Lexicon", "build_lexicon", "EvalReport", "attachment_scores",
    "ModelConfig", "Parser",
]

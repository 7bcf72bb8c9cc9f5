"""
Tokenizer Service - fixed byte-level vocabulary for toy models
"""

from typing import List

PAD_ID = 0
END_ID = 1
RESERVED = 2


class ByteTokenizer:
    """Byte-level tokenizer: ids 0 (pad) and 1 (end) are reserved, bytes fold onto the rest."""

    def __init__(self, vocab_size: int):
        if vocab_size <= RESERVED:
            raise ValueError(f"vocab_size must exceed {RESERVED}, got {vocab_size}")
        self.vocab_size = vocab_size
        self.n_byte_ids = vocab_size - RESERVED

    def encode(self, text: str, add_end: bool = False) -> List[int]:
        """
        Encode UTF-8 text to token ids.

        Args:
            text: Input text
            add_end: Append the end token

        Returns:
            List of token ids
        """
        ids = [RESERVED + (b % self.n_byte_ids) for b in text.encode('utf-8')]
        if add_end:
            ids.append(END_ID)
        return ids

    def decode(self, ids: List[int]) -> str:
        """Decode ids back to text; reserved ids are dropped. Exact only when vocab_size >= 258."""
        data = bytes((i - RESERVED) % 256 for i in ids if i >= RESERVED)
        return data.decode('utf-8', errors='replace')

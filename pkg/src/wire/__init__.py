"""Bit-exact codecs for the BitTorrent artifacts an exit relay observes."""

# expect: imports "shop.utils.text.slug"; no functions
from .text import slug

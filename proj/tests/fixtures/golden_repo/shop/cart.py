# expect: self.add resolves to the class method, self.items.append stays raw
from .models.product import Product
from . import pricing


class Cart:
    """A shopping cart."""

    def __init__(self):
        self.items = []

    def add(self, product):
        """Add a product.

        Duplicates are allowed.
        """
        self.items.append(product)
        return self

    def total(self):
        return pricing.total([p.price for p in self.items])

    def add_all(self, products):
        for p in products:
            self.add(p)
        self.clear()


def checkout(cart):
    total = cart.total()
    return Product.describe(total)

# expect: duplicate definitions merge into one function entry (property setter)
class Config:
    @property
    def level(self):
        "current level"
        return self._level

    @level.setter
    def level(self, value):
        self._level = int(value)

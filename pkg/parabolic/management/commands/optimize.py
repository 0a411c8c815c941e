from parabolic.runner import RunCommand


class Command(RunCommand):
    help = 'Penalized minimal-time search along an epsilon schedule'
    command = 'optimize'

from parabolic.runner import RunCommand


class Command(RunCommand):
    help = 'Minimal-time reference on the spatially constant reduction'
    command = 'oracle'

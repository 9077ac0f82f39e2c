import math,json
class Net:
    def __init__(s,name,h,w,c,nc): s.name=name;s.inp=(h,w,c);s.nc=nc;s.layers=[];s.shape={}
    def add(s,name,kind,preds,k=None,stride=1,out=None,tie=None,prunable=False):
        d=dict(name=name,kind=kind,predecessors=preds)
        if k is not None: d['kernel']=k
        if kind in('conv','pool'): d['stride']=stride
        if out is not None: d['out_channels']=out
        if tie: d['tie_group']=tie
        d['prunable']=prunable
        s.layers.append(d); return name
    def cost(s):
        sh={};fl=0;pa=0;ch=0;bnp=0;bias=0
        for l in s.layers:
            ps=[sh[p] for p in l['predecessors']] if l['predecessors'] else [s.inp]
            h,w,c=ps[0]
            k=l['kind']
            if k=='conv':
                kk=l['kernel']; st=l['stride']; o=l['out_channels']
                oh,ow=-(-h//st),-(-w//st)
                fl+=oh*ow*kk*kk*c*o; pa+=kk*kk*c*o; bias+=o; bnp+=2*o; ch+=o
                sh[l['name']]=(oh,ow,o)
            elif k=='pool':
                st=l['stride']; sh[l['name']]=(-(-h//st),-(-w//st),c)
            elif k=='global-pool': sh[l['name']]=(1,1,c)
            elif k=='add':
                assert all(p[2]==c for p in ps),l; sh[l['name']]=(h,w,c)
            elif k=='concat':
                sh[l['name']]=(h,w,sum(p[2] for p in ps))
            elif k=='fc':
                i=h*w*c;o=l['out_channels'];fl+=i*o;pa+=i*o;bias+=o
                sh[l['name']]=(1,1,o)
        return ch,fl/1e6,pa/1e6,(pa+bias)/1e6,(pa+bias+bnp)/1e6,(pa+bnp)/1e6

def vgg():
    n=Net('vgg16-cifar',32,32,3,10);prev=[];i=0;j=0
    for v in [64,64,'M',128,128,'M',256,256,256,'M',512,512,512,'M',512,512,512]:
        if v=='M': j+=1; prev=[n.add(f'pool{j}','pool',prev,2,2)]
        else: i+=1; prev=[n.add(f'conv{i}','conv',prev,3,1,v,prunable=True)]
    prev=[n.add('gap','global-pool',prev)]
    n.add('fc','fc',prev,out=10); return n

def googlenet():
    n=Net('googlenet-cifar',32,32,3,10)
    prev=[n.add('pre','conv',[],3,1,192,prunable=True)]
    def inc(nm,prev,n1,n3r,n3,n5r,n5,pp):
        a=n.add(nm+'.b1','conv',prev,1,1,n1,prunable=True)
        b=n.add(nm+'.b2a','conv',prev,1,1,n3r,prunable=True); b=n.add(nm+'.b2b','conv',[b],3,1,n3,prunable=True)
        c=n.add(nm+'.b3a','conv',prev,1,1,n5r,prunable=True); c=n.add(nm+'.b3b','conv',[c],3,1,n5,prunable=True); c=n.add(nm+'.b3c','conv',[c],3,1,n5,prunable=True)
        d=n.add(nm+'.b4p','pool',prev,3,1); d=n.add(nm+'.b4','conv',[d],1,1,pp,prunable=True)
        return [n.add(nm+'.cat','concat',[a,b,c,d])]
    prev=inc('a3',prev,64,96,128,16,32,32)
    prev=inc('b3',prev,128,128,192,32,96,64)
    prev=[n.add('pool3','pool',prev,3,2)]
    for nm,cfg in [('a4',(192,96,208,16,48,64)),('b4',(160,112,224,24,64,64)),('c4',(128,128,256,24,64,64)),('d4',(112,144,288,32,64,64)),('e4',(256,160,320,32,128,128))]:
        prev=inc(nm,prev,*cfg)
    prev=[n.add('pool4','pool',prev,3,2)]
    prev=inc('a5',prev,256,160,320,32,128,128)
    prev=inc('b5',prev,384,192,384,48,128,128)
    prev=[n.add('gap','global-pool',prev)]
    n.add('fc','fc',prev,out=10);return n

def rcifar(depth):
    nb=(depth-2)//6;n=Net(f'resnet{depth}-cifar',32,32,3,10)
    x=n.add('conv1','conv',[],3,1,16)
    inp=16
    for s,pl in enumerate([16,32,64]):
        for b in range(nb):
            st=2 if (s>0 and b==0) else 1
            p=f's{s+1}.b{b+1}'
            a=n.add(p+'.conv1','conv',[x],3,st,pl,prunable=True)
            a=n.add(p+'.conv2','conv',[a],3,1,pl)
            if st!=1 or inp!=pl:
                q=n.add(p+'.sub','pool',[x],1,2)
                sc=n.add(p+'.pad','concat',[q,q])
            else: sc=x
            x=n.add(p+'.add','add',[a,sc]); inp=pl
    x=n.add('gap','global-pool',[x]); n.add('fc','fc',[x],out=10); return n

def rimnet(depth,v15=True):
    cfg={18:('basic',[2,2,2,2]),34:('basic',[3,4,6,3]),50:('bottle',[3,4,6,3]),101:('bottle',[3,4,23,3]),152:('bottle',[3,8,36,3])}[depth]
    kind,blocks=cfg;n=Net(f'resnet{depth}-imagenet',224,224,3,1000)
    x=n.add('conv1','conv',[],7,2,64,prunable=True,tie=('stage1' if kind=='basic' else None))
    x=n.add('maxpool','pool',[x],3,2)
    exp=1 if kind=='basic' else 4
    inp=64
    for s,pl in enumerate([64,128,256,512]):
        g=f'stage{s+1}'
        for b in range(blocks[s]):
            st=2 if (s>0 and b==0) else 1
            p=f'layer{s+1}.{b}'
            if kind=='basic':
                a=n.add(p+'.conv1','conv',[x],3,st,pl,prunable=True)
                a=n.add(p+'.conv2','conv',[a],3,1,pl,tie=g,prunable=True)
            else:
                a=n.add(p+'.conv1','conv',[x],1,1 if v15 else st,pl,prunable=True)
                a=n.add(p+'.conv2','conv',[a],3,st if v15 else 1,pl,prunable=True)
                a=n.add(p+'.conv3','conv',[a],1,1,pl*exp,tie=g,prunable=True)
            if st!=1 or inp!=pl*exp:
                sc=n.add(p+'.downsample','conv',[x],1,st,pl*exp,tie=g,prunable=True)
            else: sc=x
            x=n.add(p+'.add','add',[a,sc]); inp=pl*exp
    x=n.add('gap','global-pool',[x]); n.add('fc','fc',[x],out=1000); return n


def mlp():
    n=Net('mlp-blobs',1,1,8,4);prev=[]
    for i,w in enumerate([64,64,64]):
        prev=[n.add(f'fc{i+1}','fc',prev,out=w,prunable=True)]
    n.add('logits','fc',prev,out=4); return n

def single():
    n=Net('single-conv',4,4,3,8)
    n.add('conv','conv',[],3,1,8,prunable=True); return n

def dump(n,path,accounting=True):
    d={'name':n.name,'input':{'h':n.inp[0],'w':n.inp[1],'c':n.inp[2]},'num_classes':n.nc}
    if accounting: d['accounting']={'conv_bias':True,'batch_norm':True,'elementwise_flops':True}
    d['layers']=n.layers
    with open(path,'w') as f:
        f.write('{\n')
        keys=[k for k in d if k!='layers']
        for k in keys: f.write(f'  "{k}": {json.dumps(d[k])},\n')
        f.write('  "layers": [\n')
        f.write(',\n'.join('    '+json.dumps(l) for l in n.layers))
        f.write('\n  ]\n}\n')

if __name__=='__main__':
    import sys,os
    out=sys.argv[1] if len(sys.argv)>1 else os.path.join(os.path.dirname(__file__),'..','descriptors')
    for n in [vgg(),googlenet(),rcifar(56),rcifar(110)]+[rimnet(d) for d in [18,34,50,101,152]]:
        dump(n,os.path.join(out,n.name+'.json'))
        print(n.name,n.cost())
    dump(mlp(),os.path.join(out,'mlp-blobs.json'),False)
    dump(single(),os.path.join(out,'single-conv.json'),False)
